//! Station logic for the wavecaster internet radio server: MP3 framing, the
//! ICY wire format, the persistent catalog, scheduling, ad targeting and
//! gap restoration. Networking lives in the `wavecaster` crate.

pub mod adserve;
pub mod catalog;
pub mod icy;
pub mod mp3frame;
pub mod restore;
pub mod scheduler;
