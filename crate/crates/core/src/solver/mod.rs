pub mod socp;
pub mod bnb;
