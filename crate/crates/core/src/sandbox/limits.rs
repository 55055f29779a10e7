use std::io;
use std::time::Duration;

/// OS resource limits applied to every script before exec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceLimits {
    /// Bytes of heap (RLIMIT_DATA).
    pub data: u64,
    /// Largest file the script may write (RLIMIT_FSIZE).
    pub file_size: u64,
    pub open_files: u64,
    /// Per-user process count; ignored by the kernel for root.
    pub processes: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            data: 512 * 1024 * 1024,
            file_size: 64 * 1024 * 1024,
            open_files: 256,
            processes: 256,
        }
    }
}

impl ResourceLimits {
    pub(crate) fn for_time_limit(&self, time_limit: Duration) -> AppliedLimits {
        AppliedLimits {
            base: *self,
            cpu_secs: time_limit.as_secs() + 2,
        }
    }

    pub(crate) fn describe(&self) -> Vec<(String, u64)> {
        vec![
            ("RLIMIT_DATA".into(), self.data),
            ("RLIMIT_FSIZE".into(), self.file_size),
            ("RLIMIT_NOFILE".into(), self.open_files),
            ("RLIMIT_NPROC".into(), self.processes),
            ("RLIMIT_CORE".into(), 0),
        ]
    }
}

/// Limits resolved for one execution; `Copy` so the pre-exec hook owns it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AppliedLimits {
    base: ResourceLimits,
    cpu_secs: u64,
}

impl AppliedLimits {
    /// Runs between fork and exec: syscalls only.
    pub(crate) fn apply(&self) -> io::Result<()> {
        set(libc::RLIMIT_CPU, self.cpu_secs)?;
        set(libc::RLIMIT_DATA, self.base.data)?;
        set(libc::RLIMIT_FSIZE, self.base.file_size)?;
        set(libc::RLIMIT_NOFILE, self.base.open_files)?;
        set(libc::RLIMIT_NPROC, self.base.processes)?;
        set(libc::RLIMIT_CORE, 0)?;
        Ok(())
    }
}

fn set(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let rlim = libc::rlimit {
        rlim_cur: value,
        rlim_max: value,
    };
    // SAFETY: rlim is a valid struct and resource a valid constant.
    if unsafe { libc::setrlimit(resource, &rlim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}
