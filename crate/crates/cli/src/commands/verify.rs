use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use nslf_core::verify::{run_suite, Suite, SuiteReport};
use serde::Serialize;

use crate::report::{write_json, SCHEMA_VERSION};
use crate::{usage, VerifyFailed};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `grad`, `sh`, `partition`, `async` or `all`.
    pub suite: String,
    /// Write the machine-readable report here.
    #[arg(long, env = "NSLFOL_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    schema_version: u32,
    passed: bool,
    suites: Vec<SuiteReport>,
}

pub fn run(args: &VerifyArgs) -> Result<()> {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![args
            .suite
            .parse()
            .map_err(|e: nslf_core::Error| usage(e.to_string()))?]
    };
    let mut reports = Vec::new();
    for suite in suites {
        let report = run_suite(suite)?;
        println!("{report}");
        reports.push(report);
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.checks
                .iter()
                .filter(|c| !c.passed)
                .map(move |c| format!("{}: {}", r.suite, c.name))
        })
        .collect();
    if let Some(out) = &args.out {
        write_json(
            &VerifyReport {
                schema_version: SCHEMA_VERSION,
                passed: failed.is_empty(),
                suites: reports,
            },
            out,
        )?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerifyFailed(failed).into())
    }
}
