pub mod audit;
pub mod datafactory;
pub mod identity;
pub mod supplychain;
pub mod governance;
pub mod gridsim;
pub mod scenario;
