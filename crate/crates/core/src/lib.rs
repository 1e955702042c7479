pub mod dynamics;
pub mod error;
pub mod grid;
pub mod huber;
pub mod objective;
pub mod newton;
pub mod experiments;
