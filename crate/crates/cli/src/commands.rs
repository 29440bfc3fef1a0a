use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fwd_core::frechet::{mean_abs_packet_diff, mosaic_grid, FrechetOptions};
use fwd_core::ingest::{self, ColorPolicy, DatasetManifest, DecodePolicy, ResizePolicy, DEFAULT_EXTENSIONS};
use fwd_core::perturb::{self, PerturbationKind, PerturbationSpec};
use fwd_core::stats::{load_stats, save_stats};
use fwd_core::{Error, FilterBank, FwdReport, PacketStatistics, PreparedReference};

use crate::{CliError, ComputeArgs, DecodeArgs, KindArg, PipelineArgs, ReportArgs, ResizeMode, StatsArgs, SweepArgs};

type CmdResult = Result<(), CliError>;

/// Formats `value` with `digits` significant digits.
pub fn format_sig(value: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if value == 0.0 || !value.is_finite() {
        return format!("{value:.*}", digits - 1);
    }
    let sci = format!("{:.*e}", digits - 1, value);
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        sci
    } else {
        format!("{:.*}", (digits as i32 - 1 - exp).max(0) as usize, value)
    }
}

fn print(out: &mut Vec<u8>, text: std::fmt::Arguments<'_>) -> CmdResult {
    out.write_fmt(text).expect("writing to memory");
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_owned(),
        source,
    })
}

impl DecodeArgs {
    fn policy(&self) -> DecodePolicy {
        let color = if self.replicate_gray {
            ColorPolicy::ReplicateToRgb
        } else {
            ColorPolicy::Native
        };
        let resize = match (self.resize, self.size) {
            (ResizeMode::Nearest, Some((height, width))) => ResizePolicy::Nearest { height, width },
            (ResizeMode::Bilinear, Some((height, width))) => ResizePolicy::Bilinear { height, width },
            _ => ResizePolicy::Strict,
        };
        DecodePolicy { color, resize }
    }
}

enum Source {
    Dir(DatasetManifest),
    Cache(PacketStatistics),
}

impl Source {
    fn open(path: &Path, policy: DecodePolicy) -> Result<Self, CliError> {
        if path.is_dir() {
            Ok(Source::Dir(ingest::scan(path, DEFAULT_EXTENSIONS, policy)?))
        } else {
            Ok(Source::Cache(load_stats(path)?))
        }
    }

    fn statistics(self, level: u32, bank: &FilterBank, batch_size: usize) -> Result<PacketStatistics, CliError> {
        match self {
            Source::Dir(manifest) => Ok(ingest::dataset_statistics(&manifest, level, bank, batch_size)?),
            Source::Cache(stats) => Ok(stats),
        }
    }
}

/// Explicit level, else the level of a cached side, else the resolution
/// default of the first directory.
fn resolve_level(explicit: Option<u32>, sources: &[&Source]) -> Result<u32, CliError> {
    let caches = sources.iter().filter_map(|s| match s {
        Source::Cache(stats) => Some(stats),
        Source::Dir(_) => None,
    });
    if let Some(level) = explicit {
        for stats in caches {
            let found = stats.fingerprint();
            if found.level != level {
                let mut expected = found.clone();
                expected.level = level;
                return Err(Error::FingerprintMismatch {
                    expected: Box::new(expected),
                    found: Box::new(found.clone()),
                }
                .into());
            }
        }
        return Ok(level);
    }
    if let Some(stats) = caches.into_iter().next() {
        return Ok(stats.fingerprint().level);
    }
    let manifest = sources
        .iter()
        .find_map(|s| match s {
            Source::Dir(m) => Some(m),
            Source::Cache(_) => None,
        })
        .expect("at least one source");
    ingest::default_level(manifest.height, manifest.width).ok_or_else(|| {
        CliError::Usage(format!(
            "no default level for {}x{} images; pass --level",
            manifest.height, manifest.width
        ))
    })
}

fn options(eps_offset: Option<f64>) -> Result<FrechetOptions, CliError> {
    if let Some(eps) = eps_offset {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(CliError::Usage(format!("--eps-offset must be finite and nonnegative, got {eps}")));
        }
    }
    Ok(FrechetOptions {
        diagonal_offset: eps_offset,
    })
}

pub fn stats(args: &StatsArgs, out: &mut Vec<u8>) -> CmdResult {
    let PipelineArgs {
        level,
        batch_size,
        decode,
    } = &args.pipeline;
    let source = Source::Dir(ingest::scan(&args.dir, DEFAULT_EXTENSIONS, decode.policy())?);
    let level = resolve_level(*level, &[&source])?;
    let stats = source.statistics(level, &FilterBank::haar(), *batch_size)?;
    save_stats(&stats, &args.out)?;
    let fp = stats.fingerprint();
    print(
        out,
        format_args!(
            "images: {}\ndims: {}x{}x{}\nlevel: {}\nfingerprint: {}\nwrote {}\n",
            stats.count(),
            fp.height,
            fp.width,
            fp.channels,
            fp.level,
            fp,
            args.out.display()
        ),
    )
}

pub fn compute(args: &ComputeArgs, out: &mut Vec<u8>, err: &mut Vec<u8>) -> CmdResult {
    let PipelineArgs {
        level,
        batch_size,
        decode,
    } = &args.pipeline;
    let options = options(args.eps_offset)?;
    let policy = decode.policy();
    let reference = Source::open(&args.reference, policy)?;
    let candidate = Source::open(&args.candidate, policy)?;
    let level = resolve_level(*level, &[&reference, &candidate])?;
    let bank = FilterBank::haar();
    let stats_r = reference.statistics(level, &bank, *batch_size)?;
    let stats_g = candidate.statistics(level, &bank, *batch_size)?;

    let mut report = fwd_core::frechet::fwd_with(&stats_r, &stats_g, &options)?;
    if !args.no_timestamp {
        report.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    write_file(&args.out, &report.to_json())?;
    if args.diff_csv.is_some() || args.diff_json.is_some() {
        let map = mean_abs_packet_diff(&stats_r, &stats_g)?.with_frechet(&report)?;
        if let Some(path) = &args.diff_csv {
            write_file(path, &map.to_csv())?;
        }
        if let Some(path) = &args.diff_json {
            write_file(path, &map.to_json())?;
        }
    }

    let clipped: usize = report
        .diagnostics
        .iter()
        .map(|d| d.clipped_reference + d.clipped_candidate)
        .sum();
    if clipped > 0 {
        let worst = report
            .diagnostics
            .iter()
            .fold(0.0f64, |m, d| m.max(d.max_clipped_magnitude));
        let _ = writeln!(
            err,
            "note: clipped {clipped} small negative eigenvalue(s), largest magnitude {worst:e}"
        );
    }
    print(
        out,
        format_args!(
            "FWD: {}\nlevel: {} ({} packets), reference N={}, candidate N={}\nreport: {}\n",
            format_sig(report.fwd, 6),
            level,
            report.per_packet.len(),
            report.reference_count,
            report.candidate_count,
            args.out.display()
        ),
    )
}

pub fn sweep(args: &SweepArgs, out: &mut Vec<u8>) -> CmdResult {
    let PipelineArgs {
        level,
        batch_size,
        decode,
    } = &args.pipeline;
    let kind = match args.kind {
        KindArg::Blur => PerturbationKind::GaussianBlur,
        KindArg::Noise => PerturbationKind::UniformNoise,
        KindArg::Jpeg => PerturbationKind::Jpeg,
    };
    let spec = PerturbationSpec::new(kind, args.grid.clone(), args.seed)?;
    let options = options(args.eps_offset)?;
    let policy = decode.policy();
    let reference = Source::open(&args.reference, policy)?;
    let target = Source::Dir(ingest::scan(&args.dir, DEFAULT_EXTENSIONS, policy)?);
    let level = resolve_level(*level, &[&reference, &target])?;
    let bank = FilterBank::haar();
    let prepared = PreparedReference::new(reference.statistics(level, &bank, *batch_size)?, options)?;
    let Source::Dir(manifest) = target else {
        unreachable!("sweep target is a directory")
    };
    let curve = perturb::sweep(&prepared, &manifest, &spec, level, &bank, *batch_size)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Output {
        path: args.out_dir.clone(),
        source,
    })?;
    let csv = curve.to_csv();
    write_file(&args.out_dir.join("curve.csv"), &csv)?;
    for (i, point) in curve.points.iter().enumerate() {
        write_file(&args.out_dir.join(format!("point_{i:03}.json")), &point.report.to_json())?;
    }
    print(out, format_args!("{csv}"))
}

fn log_value(v: f64) -> String {
    if v > 0.0 {
        format!("{}", v.log10())
    } else {
        "-inf".to_owned()
    }
}

pub fn report(args: &ReportArgs, out: &mut Vec<u8>) -> CmdResult {
    let text = std::fs::read_to_string(&args.report).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::Core(Error::Format(format!("{}: {e}", args.report.display()))),
        _ => CliError::Output {
            path: args.report.clone(),
            source: e,
        },
    })?;
    let report = FwdReport::from_json(&text)?;
    let value = |v: f64| if args.log { log_value(v) } else { format!("{v}") };
    let header = if args.log { "log10_fd" } else { "fd" };

    let mut table = format!(
        "FWD: {} (mean over {} packets, level {})\nrank\tcode\t{header}\n",
        report.fwd,
        report.per_packet.len(),
        report.fingerprint.level
    );
    let order = report.ranked();
    let top = args.top.unwrap_or(order.len()).min(order.len());
    for (rank, &p) in order.iter().take(top).enumerate() {
        table.push_str(&format!("{}\t{}\t{}\n", rank + 1, report.layout[p], value(report.per_packet[p])));
    }
    print(out, format_args!("{table}"))?;

    if let Some(path) = &args.csv {
        let mut csv = format!("code,{header}\n");
        for (code, v) in report.layout.iter().zip(&report.per_packet) {
            csv.push_str(&format!("{code},{}\n", value(*v)));
        }
        write_file(path, &csv)?;
    }
    if let Some(path) = &args.grid_csv {
        let grid = mosaic_grid(&report.layout, &report.per_packet);
        let csv: String = grid
            .iter()
            .map(|row| row.iter().map(|v| value(*v)).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        write_file(path, &csv)?;
    }
    Ok(())
}
