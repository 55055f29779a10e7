//! Root-changed execution: private mount namespace, read-only bind mounts of the
//! system directories, chroot into the skeleton, then drop to `nobody`.

use std::ffi::CString;
use std::fs;
use std::io;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::ptr;
use std::sync::OnceLock;

use super::{Layout, SandboxError};

const NOBODY: libc::uid_t = 65534;
const SYSTEM_DIRS: &[&str] = &[
    "/usr", "/bin", "/sbin", "/lib", "/lib32", "/lib64", "/libx32", "/etc", "/dev",
];

/// Whether this host lets us build the strict environment. Probed once.
pub(super) fn available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        // SAFETY: geteuid has no preconditions.
        if unsafe { libc::geteuid() } != 0 {
            return false;
        }
        let mut cmd = Command::new("/bin/sh");
        cmd.args(["-c", "exit 0"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null());
        // SAFETY: only raw syscalls in the child.
        unsafe {
            cmd.pre_exec(|| {
                check(libc::unshare(libc::CLONE_NEWNS))?;
                check(libc::mount(
                    ptr::null(),
                    c"/".as_ptr(),
                    ptr::null(),
                    libc::MS_REC | libc::MS_PRIVATE,
                    ptr::null(),
                ))
            });
        }
        matches!(cmd.status(), Ok(s) if s.success())
    })
}

#[derive(Debug, Clone)]
struct Bind {
    src: CString,
    dst: CString,
}

/// Everything the child needs to enter the root, allocated before fork.
#[derive(Debug, Clone)]
pub(crate) struct Chroot {
    root: CString,
    workdir: CString,
    binds: Vec<Bind>,
}

impl Chroot {
    pub(super) fn plan(&self) -> Chroot {
        self.clone()
    }

    /// Runs in the forked child: raw syscalls only.
    pub(super) fn enter(&self) -> io::Result<()> {
        // SAFETY: every pointer comes from a CString owned by self.
        unsafe {
            check(libc::unshare(libc::CLONE_NEWNS))?;
            check(libc::mount(
                ptr::null(),
                c"/".as_ptr(),
                ptr::null(),
                libc::MS_REC | libc::MS_PRIVATE,
                ptr::null(),
            ))?;
            for bind in &self.binds {
                check(libc::mount(
                    bind.src.as_ptr(),
                    bind.dst.as_ptr(),
                    ptr::null(),
                    libc::MS_BIND | libc::MS_REC,
                    ptr::null(),
                ))?;
                check(libc::mount(
                    ptr::null(),
                    bind.dst.as_ptr(),
                    ptr::null(),
                    libc::MS_BIND | libc::MS_REMOUNT | libc::MS_RDONLY | libc::MS_NOSUID,
                    ptr::null(),
                ))?;
            }
            check(libc::chroot(self.root.as_ptr()))?;
            check(libc::chdir(self.workdir.as_ptr()))?;
            check(libc::setgroups(0, ptr::null()))?;
            check(libc::setgid(NOBODY))?;
            check(libc::setuid(NOBODY))?;
        }
        Ok(())
    }
}

fn check(rc: libc::c_int) -> io::Result<()> {
    if rc != 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(())
    }
}

fn cstring(path: &Path) -> Result<CString, SandboxError> {
    CString::new(path.as_os_str().as_bytes()).map_err(|e| SandboxError::setup("path", e))
}

pub(super) fn prepare(scratch: &Path, shared: Option<&Path>) -> Result<Layout, SandboxError> {
    let root = scratch.join("root");
    let work = root.join("work");
    let tmp = root.join("tmp");
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| SandboxError::setup("building root", e));
    mk(&work)?;
    mk(&tmp)?;
    fs::set_permissions(&tmp, fs::Permissions::from_mode(0o1777))
        .map_err(|e| SandboxError::setup("building root", e))?;

    let mut binds = Vec::new();
    for dir in SYSTEM_DIRS {
        let host = Path::new(dir);
        let Ok(meta) = fs::symlink_metadata(host) else {
            continue;
        };
        let inside = root.join(dir.trim_start_matches('/'));
        if meta.file_type().is_symlink() {
            let target = fs::read_link(host).map_err(|e| SandboxError::setup("reading link", e))?;
            std::os::unix::fs::symlink(target, &inside)
                .map_err(|e| SandboxError::setup("building root", e))?;
        } else if meta.is_dir() {
            mk(&inside)?;
            binds.push(Bind {
                src: cstring(host)?,
                dst: cstring(&inside)?,
            });
        }
    }
    if let Some(shared) = shared {
        let shared = shared
            .canonicalize()
            .map_err(|e| SandboxError::setup("shared files", e))?;
        let inside = root.join(shared.strip_prefix("/").unwrap_or(&shared));
        mk(&inside)?;
        binds.push(Bind {
            src: cstring(&shared)?,
            dst: cstring(&inside)?,
        });
    }

    Ok(Layout {
        host_workdir: work,
        visible_workdir: PathBuf::from("/work"),
        chroot: Some(Chroot {
            root: cstring(&root)?,
            workdir: c"/work".to_owned(),
            binds,
        }),
    })
}

/// Gives the unprivileged script ownership of its working directory.
pub(super) fn hand_over(workdir: &Path) -> Result<(), SandboxError> {
    let chown = |p: &Path| {
        std::os::unix::fs::chown(p, Some(NOBODY), Some(NOBODY))
            .map_err(|e| SandboxError::setup("chown scratch", e))
    };
    chown(workdir)?;
    for entry in fs::read_dir(workdir).map_err(|e| SandboxError::setup("scratch", e))? {
        let entry = entry.map_err(|e| SandboxError::setup("scratch", e))?;
        chown(&entry.path())?;
    }
    Ok(())
}

/// True when the current mount namespace has anything mounted below `dir`.
pub(super) fn has_mounts_under(dir: &Path) -> bool {
    let Ok(info) = fs::read_to_string("/proc/self/mountinfo") else {
        return false;
    };
    let dir = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    info.lines()
        .filter_map(|l| l.split_whitespace().nth(4))
        .any(|mp| Path::new(mp).starts_with(&dir))
}
