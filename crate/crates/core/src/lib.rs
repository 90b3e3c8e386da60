pub mod activity;
pub mod analysis;
pub mod par;
pub mod petri;
pub mod session;
pub mod twin;
