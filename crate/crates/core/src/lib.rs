pub mod certificates;
pub mod condensed;
pub mod error;
pub mod lti;
pub mod pgm;
pub mod presets;
pub mod report;
pub mod scenario;
pub mod sim;
