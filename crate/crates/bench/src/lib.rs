pub use analytic_policy::*;
