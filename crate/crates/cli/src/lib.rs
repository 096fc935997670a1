//! Command-line front-end: CSV ingestion, the `test`, `estimate`,
//! `simulate` and `unmix` commands, and TOML/CSV reports.

pub mod args;
pub mod error;
pub mod ingest;
pub mod report;
pub mod run;

use std::ffi::OsString;

use clap::Parser;

pub use args::RunConfig;
pub use error::CliError;
pub use ingest::{ingest_csv, write_matrix_csv};
pub use run::run_command;

/// Parse arguments, run the command and return the process exit status.
/// A statistical rejection is a successful run.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cfg.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    match run_command(&cfg) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if let CliError::Core(ngdim_core::Error::EstimationAborted { visited, .. }) = &e {
                for v in visited {
                    eprintln!("  k = {}: {:?} (p-value {:?})", v.k, v.decision, v.p_value);
                }
            }
            e.exit_status()
        }
    }
}
