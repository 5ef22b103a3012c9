pub mod covariance;
pub mod fit;
pub mod forecast;
pub mod simulate;
pub mod validate;
