pub mod gradcheck;
pub mod stubs;
pub mod signal;
