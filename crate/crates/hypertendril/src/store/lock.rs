// SPDX-License-Identifier: Apache-2.0

//! `<proc>.lock` files holding the writer's pid.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{io_err, StoreError};

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    /// Takes the lock, replacing a lock left behind by a dead process.
    pub fn acquire(path: &Path, process_id: &str) -> Result<LockGuard, StoreError> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(|e| io_err(path, e))?;
                    return Ok(LockGuard {
                        path: path.to_path_buf(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid_alive(pid) => {
                            return Err(StoreError::Locked {
                                process_id: process_id.to_string(),
                                pid,
                            })
                        }
                        _ => {
                            let _ = std::fs::remove_file(path);
                        }
                    }
                }
                Err(e) => return Err(io_err(path, e)),
            }
        }
        Err(StoreError::Locked {
            process_id: process_id.to_string(),
            pid: 0,
        })
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Reads the pid recorded in a lock file, if any.
pub fn holder(path: &Path) -> Option<u32> {
    std::fs::read_to_string(path).ok()?.trim().parse().ok()
}

#[cfg(target_os = "linux")]
pub fn pid_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

#[cfg(not(target_os = "linux"))]
pub fn pid_alive(pid: u32) -> bool {
    pid == std::process::id()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s1-p1.lock");
        let g = LockGuard::acquire(&p, "s1-p1").unwrap();
        assert_eq!(holder(&p), Some(std::process::id()));
        assert!(matches!(LockGuard::acquire(&p, "s1-p1"), Err(StoreError::Locked { .. })));
        drop(g);
        assert!(!p.exists());
        LockGuard::acquire(&p, "s1-p1").unwrap();
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lock");
        std::fs::write(&p, "4000000000").unwrap();
        LockGuard::acquire(&p, "x").unwrap();
    }
}
