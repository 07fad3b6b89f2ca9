use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use loomsoc::host::{self, load_records, report, write_run};
use loomsoc::sevenseg::encode_digit;
use loomsoc::sim::{run, Scenario, ScenarioError};
use loomsoc::uart::{rx_bytes, UartBitstream, UartConfig, DEFAULT_BAUD};

#[derive(Parser)]
#[command(name = "loomsoc", version, about = "Loom performance monitor emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write records, summary, display trace and UART bits.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-shift report for a records.jsonl file.
    Report { records: PathBuf },
    /// Decode a uart.bits file.
    UartDecode {
        bits: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BAUD)]
        baud: u32,
    },
    /// Run a scenario twice and check its invariants.
    Verify { scenario: PathBuf },
    /// Print the seven-segment mask of a digit.
    EncodeDigit { digit: u8 },
}

fn load_scenario(path: &PathBuf) -> Result<Result<Scenario, ScenarioError>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_json(&text))
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn try_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out } => {
            let scenario = match load_scenario(&scenario)? {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("invalid scenario: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let output = run(&scenario)?;
            for e in &output.errors {
                eprintln!("{} us: {}", e.at, e.message);
            }
            for path in write_run(&output, &scenario, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { records } => {
            let records = load_records(&records)?;
            println!("{}", report(&records));
            Ok(ExitCode::SUCCESS)
        }
        Command::UartDecode { bits, baud } => {
            let cfg = UartConfig::new(baud)?;
            let text = fs::read_to_string(&bits).with_context(|| format!("reading {}", bits.display()))?;
            let stream: UartBitstream = text.parse().with_context(|| format!("parsing {}", bits.display()))?;
            let decoded = rx_bytes(&stream, cfg);
            print!("{}", String::from_utf8_lossy(&decoded.bytes));
            if !decoded.bytes.ends_with(b"\n") && !decoded.bytes.is_empty() {
                println!();
            }
            for e in &decoded.errors {
                println!("{e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { scenario } => {
            let scenario = match load_scenario(&scenario)? {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("invalid scenario: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let checks = host::verify(&scenario)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::EncodeDigit { digit } => {
            let mask = encode_digit(digit)?;
            println!("0x{:02X}", mask.to_byte());
            Ok(ExitCode::SUCCESS)
        }
    }
}
