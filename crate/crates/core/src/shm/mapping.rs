//! Thin wrapper over `shm_open` + `mmap`.

use std::ffi::CString;
use std::io;
use std::ptr::NonNull;

use super::ShmError;

pub(crate) struct Mapping {
    ptr: NonNull<u8>,
    len: usize,
}

// The mapping is plain shared memory; synchronization is the caller's job.
unsafe impl Send for Mapping {}
unsafe impl Sync for Mapping {}

impl Mapping {
    pub(crate) fn as_ptr(&self) -> *mut u8 {
        self.ptr.as_ptr()
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }
}

impl Drop for Mapping {
    fn drop(&mut self) {
        unsafe {
            libc::munmap(self.ptr.as_ptr().cast(), self.len);
        }
    }
}

/// An open shared-memory file descriptor, closed on drop.
pub(crate) struct ShmFd {
    fd: libc::c_int,
    name: String,
}

impl Drop for ShmFd {
    fn drop(&mut self) {
        unsafe {
            libc::close(self.fd);
        }
    }
}

fn os_name(name: &str) -> Result<CString, ShmError> {
    CString::new(format!("/{name}")).map_err(|_| ShmError::Os {
        op: "shm name",
        name: name.to_owned(),
        source: io::Error::from(io::ErrorKind::InvalidInput),
    })
}

fn os_err(op: &'static str, name: &str) -> ShmError {
    ShmError::Os { op, name: name.to_owned(), source: io::Error::last_os_error() }
}

impl ShmFd {
    pub(crate) fn create(name: &str, len: u64) -> Result<Self, ShmError> {
        let c = os_name(name)?;
        let fd = unsafe { libc::shm_open(c.as_ptr(), libc::O_CREAT | libc::O_EXCL | libc::O_RDWR, 0o600) };
        if fd < 0 {
            let err = io::Error::last_os_error();
            if err.kind() == io::ErrorKind::AlreadyExists {
                return Err(ShmError::NameCollision(name.to_owned()));
            }
            return Err(ShmError::Os { op: "shm_open", name: name.to_owned(), source: err });
        }
        let shm = ShmFd { fd, name: name.to_owned() };
        let size = libc::off_t::try_from(len).map_err(|_| ShmError::InvalidSize(len))?;
        if unsafe { libc::ftruncate(fd, size) } != 0 {
            let e = os_err("ftruncate", name);
            unlink(name);
            return Err(e);
        }
        Ok(shm)
    }

    pub(crate) fn open(name: &str) -> Result<Self, ShmError> {
        let c = os_name(name)?;
        let fd = unsafe { libc::shm_open(c.as_ptr(), libc::O_RDWR, 0) };
        if fd < 0 {
            let err = io::Error::last_os_error();
            if err.kind() == io::ErrorKind::NotFound {
                return Err(ShmError::NotFound(name.to_owned()));
            }
            return Err(ShmError::Os { op: "shm_open", name: name.to_owned(), source: err });
        }
        Ok(ShmFd { fd, name: name.to_owned() })
    }

    pub(crate) fn size(&self) -> Result<u64, ShmError> {
        let mut st: libc::stat = unsafe { std::mem::zeroed() };
        if unsafe { libc::fstat(self.fd, &mut st) } != 0 {
            return Err(os_err("fstat", &self.name));
        }
        Ok(st.st_size as u64)
    }

    pub(crate) fn map(&self, len: usize, writable: bool) -> Result<Mapping, ShmError> {
        let prot = if writable { libc::PROT_READ | libc::PROT_WRITE } else { libc::PROT_READ };
        let ptr = unsafe { libc::mmap(std::ptr::null_mut(), len, prot, libc::MAP_SHARED, self.fd, 0) };
        if ptr == libc::MAP_FAILED {
            return Err(os_err("mmap", &self.name));
        }
        Ok(Mapping { ptr: NonNull::new(ptr.cast()).expect("mmap returned null"), len })
    }
}

/// Removes the name; existing mappings stay valid.
pub(crate) fn unlink(name: &str) {
    if let Ok(c) = os_name(name) {
        unsafe {
            libc::shm_unlink(c.as_ptr());
        }
    }
}
