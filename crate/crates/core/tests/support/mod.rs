pub mod refnet;
