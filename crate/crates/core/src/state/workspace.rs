//! Contestant workspaces: one `NN-<id>/` directory per unlocked problem holding
//! the statement and the public cases. Hidden cases and hints never go here.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::pack::{ContestPack, FILES_PLACEHOLDER, INPUT_PLACEHOLDER};

pub fn problem_dir_name(position: usize, id: &str) -> String {
    format!("{:02}-{id}", position + 1)
}

/// Writes (or leaves untouched, when already current) every file for the
/// unlocked problems. Returns all materialized paths.
pub fn materialize(
    pack: &ContestPack,
    unlocked: &[String],
    root: &Path,
    shared_files: Option<&Path>,
) -> io::Result<Vec<PathBuf>> {
    let files = shared_files
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|| pack.shared_root().to_string_lossy().into_owned());
    let mut written = Vec::new();
    for id in unlocked {
        let (Some(position), Some(problem)) = (pack.position(id), pack.problem(id)) else {
            continue;
        };
        let dir = root.join(problem_dir_name(position, id));
        let public = dir.join("public");
        fs::create_dir_all(&public)?;

        let statement = format!("{}\n\n{}", problem.title, problem.statement);
        write_if_changed(&dir.join("statement.txt"), statement.as_bytes(), &mut written)?;
        for case in &problem.public_cases {
            let stdin_path = public.join(format!("{}.stdin", case.id));
            let args: String = case
                .argv
                .iter()
                .map(|a| {
                    a.replace(FILES_PLACEHOLDER, &files)
                        .replace(INPUT_PLACEHOLDER, &stdin_path.to_string_lossy())
                        + "\n"
                })
                .collect();
            write_if_changed(&public.join(format!("{}.args", case.id)), args.as_bytes(), &mut written)?;
            if !case.stdin.is_empty() {
                write_if_changed(&stdin_path, &case.stdin, &mut written)?;
            }
            write_if_changed(
                &public.join(format!("{}.out", case.id)),
                &case.expected_stdout,
                &mut written,
            )?;
        }
        written.push(dir);
    }
    Ok(written)
}

fn write_if_changed(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> io::Result<()> {
    if fs::read(path).ok().as_deref() != Some(bytes) {
        fs::write(path, bytes)?;
    }
    written.push(path.to_path_buf());
    Ok(())
}
