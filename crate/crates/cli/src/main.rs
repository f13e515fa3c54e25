use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vecboost::bench::{self, FaultInjection, PrefetchMode, SizeClass, SocConfig, Workload};
use vecboost::kernels::{self, KernelOptions};
use vecboost::pipeline::{self, RemapFile};
use vecboost::scalar;
use vecboost::{vbt, Error, KernelKind};

#[derive(Parser)]
#[command(name = "vecboost", version, about = "Scalar vs. vector kernel verification, cycle benchmarks and pipeline latency reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Machine {
    /// SoC description (TOML); built-in defaults when omitted.
    #[arg(long)]
    soc: Option<PathBuf>,
    /// Override the vector unit's maximum vector length.
    #[arg(long)]
    maxvl: Option<usize>,
}

impl Machine {
    fn load(&self) -> Result<SocConfig, Error> {
        let mut soc = match &self.soc {
            Some(p) => SocConfig::load(p)?,
            None => SocConfig::default(),
        };
        if let Some(m) = self.maxvl {
            soc.vm.maxvl = m;
            soc.validate()?;
        }
        Ok(soc)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Prefetch {
    On,
    Off,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Compare vector and scalar outputs bit for bit.
    Verify {
        kernel: KernelKind,
        #[arg(long)]
        c: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        w: Option<usize>,
        /// Upsample factor.
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        machine: Machine,
        /// Flip one bit of the vector output at this index before comparing.
        #[arg(long, hide = true)]
        inject_fault: Option<usize>,
    },
    /// Modeled cycles of scalar and vector kernels as CSV.
    Bench {
        /// Kernels to run; all when omitted.
        #[arg(long = "kernel", value_name = "KERNEL")]
        kernels: Vec<KernelKind>,
        /// Workload sizes; all when omitted.
        #[arg(long = "size", value_name = "SIZE")]
        sizes: Vec<SizeClass>,
        #[arg(long, value_enum, default_value = "both")]
        prefetch: Prefetch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        machine: Machine,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Layer latency report, optionally with layers remapped.
    Pipeline {
        /// Layer table (TOML); the shipped table when omitted.
        #[arg(long)]
        layers: Option<PathBuf>,
        /// Remap scenarios (TOML).
        #[arg(long)]
        remap: Option<PathBuf>,
        /// Scenario within the remap file.
        #[arg(long, default_value = "large")]
        scenario: String,
        /// Preprocessing size class.
        #[arg(long, default_value = "standard")]
        size: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Letterbox a PPM image into a tensor file.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 416)]
        target: usize,
        /// Also run the vector normalize stage and require equal results.
        #[arg(long)]
        compare_vector: bool,
        #[command(flatten)]
        machine: Machine,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dispatch(_) => 2,
        _ => 1,
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Verify {
            kernel,
            c,
            h,
            w,
            factor,
            seed,
            machine,
            inject_fault,
        } => {
            let soc = machine.load()?;
            let workloads = if c.is_none() && h.is_none() && w.is_none() {
                bench::verify_sweep(kernel, soc.vm.maxvl)
            } else {
                let mut wl = Workload::new(kernel, c.unwrap_or(1), h.unwrap_or(1), w.unwrap_or(1));
                wl.factor = factor;
                vec![wl]
            };
            let report = bench::verify(kernel, &workloads, &soc, seed, FaultInjection(inject_fault))?;
            println!(
                "{}: {} cases, {} mismatching",
                report.kernel,
                report.cases,
                report.mismatches.len()
            );
            for m in &report.mismatches {
                println!(
                    "  c={} h={} w={} seed={}: first differing indices {:?}",
                    m.c, m.h, m.w, m.seed, m.indices
                );
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Bench {
            mut kernels,
            mut sizes,
            prefetch,
            seed,
            machine,
            out,
        } => {
            let soc = machine.load()?;
            if kernels.is_empty() {
                kernels = KernelKind::ALL.to_vec();
            }
            if sizes.is_empty() {
                sizes = SizeClass::ALL.to_vec();
            }
            let mode = match prefetch {
                Prefetch::On => PrefetchMode::On,
                Prefetch::Off => PrefetchMode::Off,
                Prefetch::Both => PrefetchMode::Both,
            };
            let rows = bench::bench(&kernels, &sizes, &soc, mode, seed)?;
            emit(&bench::bench_csv(&rows)?, out.as_deref())?;
            Ok(0)
        }
        Command::Pipeline {
            layers,
            remap,
            scenario,
            size,
            format,
            out,
        } => {
            let graph = match layers {
                Some(p) => pipeline::load_layer_table(p)?,
                None => pipeline::default_layer_table(),
            };
            let (outcome, chosen) = match remap {
                Some(p) => {
                    let file = RemapFile::load(p)?;
                    let s = file.scenario(&scenario)?.clone();
                    (pipeline::apply_remap(&graph, &s.rules)?, Some(s))
                }
                None => (pipeline::apply_remap(&graph, &[])?, None),
            };
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let mut report = pipeline::report(&graph, &outcome, &size)?;
            if let Some(s) = &chosen {
                pipeline::add_scenario_reference(&mut report, s);
            }
            let text = match format {
                Format::Json => report.to_json() + "\n",
                Format::Csv => report.to_csv()?,
            };
            emit(&text, out.as_deref())?;
            Ok(0)
        }
        Command::Convert {
            input,
            output,
            target,
            compare_vector,
            machine,
        } => {
            let soc = machine.load()?;
            let img = scalar::load_ppm(&input)?;
            let tensor = scalar::letterbox_preprocess(&img, target)?;
            if compare_vector {
                let mut vm = soc.new_vm()?;
                let v = kernels::v_normalize_u8_to_f32(&mut vm, &img, KernelOptions::default())?;
                let planes = scalar::normalize_planes(&img).concat();
                let same = v
                    .as_f32()
                    .is_some_and(|got| got.iter().map(|x| x.to_bits()).eq(planes.iter().map(|x| x.to_bits())));
                if !same {
                    eprintln!("vector normalize differs from the scalar stage");
                    return Ok(1);
                }
                eprintln!("vector normalize matches ({} cycles)", vm.cycles().total);
            }
            vbt::write_tensor_file(&tensor, &output)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
