//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::classifier::classify;
use crate::config::{parse_bounds, parse_grid_size, parse_methods, RunConfig};
use crate::dataset::{load_dataset, parse_records, Dataset, Position, GEO_HEADER, UTM_HEADER};
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, label_dataset, rank_cells};
use crate::geodesy::{latlon_to_utm, JURISDICTION_ZONE};
use crate::grid::{Grid, PosteriorSurface};
use crate::posterior::{run_method, MethodId};
use crate::priors::{build_prior_set, ParamKind};
use crate::rossmo::{default_params, hit_score_surface};

const TOP_CELLS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "geoprofile", version, about = "Anchor-point estimation for serial offenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Crime CSV (geographic or planar layout).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid size as columns x rows, e.g. 100x70.
    #[arg(long, value_name = "WxH")]
    pub grid: Option<String>,
    /// Grid bounds in UTM km.
    #[arg(long, value_name = "W,E,S,N", allow_hyphen_values = true)]
    pub bounds: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append UTM zone/easting/northing columns to a geographic CSV.
    Convert(Common),
    /// Assign a resident subtype to every offender.
    Classify(Common),
    /// Posterior surface of one method for one offender.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        offender: String,
        #[arg(long, default_value = "1a")]
        method: String,
        /// Also write the offender's leave-one-out parameter priors.
        #[arg(long)]
        export_priors: bool,
    },
    /// Leave-one-out search-fraction comparison of methods.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method ids (1a,1b,2ai,2aii,2bi,2bii,ROSSMO).
        #[arg(long)]
        method: Option<String>,
        /// `residents` or `all`.
        #[arg(long)]
        scope: Option<String>,
    },
    /// Write the cell centres of the configured grid.
    EmitGrid(Common),
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = &common.grid {
        let (w, h) = parse_grid_size(g)?;
        cfg.grid.ncols = w;
        cfg.grid.nrows = h;
    }
    if let Some(b) = &common.bounds {
        let [w, e, s, n] = parse_bounds(b)?;
        cfg.grid = Grid {
            west: w,
            east: e,
            south: s,
            north: n,
            ..cfg.grid
        };
    }
    Ok(cfg)
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given (--dataset or `dataset =` in the config)".into()))
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = dataset_path(cfg)?;
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    load_dataset(file)
}

/// Writer for an optional output file, standard output otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn cmd_convert<R: Read, W: Write>(input: R, output: W) -> Result<()> {
    let mut bytes = Vec::new();
    let mut input = input;
    input.read_to_end(&mut bytes)?;
    let mut header: Vec<&str> = GEO_HEADER.to_vec();
    header.extend(["zone", UTM_HEADER[3], UTM_HEADER[4], UTM_HEADER[5], UTM_HEADER[6]]);
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(&header)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        wtr.flush()?;
        return Ok(());
    }
    for r in parse_records(bytes.as_slice())? {
        let (Position::Geo(site), anchor) = (r.crime_site, r.anchor) else {
            return Err(Error::Schema("convert expects the geographic layout".into()));
        };
        let s = latlon_to_utm(site, Some(JURISDICTION_ZONE))?;
        let (alat, alon, a) = match anchor {
            Some(Position::Geo(g)) => (
                Some(g.lat),
                Some(g.lon),
                Some(latlon_to_utm(g, Some(JURISDICTION_ZONE))?),
            ),
            _ => (None, None, None),
        };
        wtr.write_record([
            r.offender_id,
            r.crime_id,
            r.ucr_code,
            format!("{}", site.lat),
            format!("{}", site.lon),
            alat.map(|v| v.to_string()).unwrap_or_default(),
            alon.map(|v| v.to_string()).unwrap_or_default(),
            s.zone.to_string(),
            format!("{:.6}", s.easting),
            format!("{:.6}", s.northing),
            fmt_opt(a.map(|p| p.easting)),
            fmt_opt(a.map(|p| p.northing)),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn cmd_classify<W: Write>(ds: &Dataset, cfg: &RunConfig, output: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["offender_id", "label", "n_clusters"])?;
    for s in &ds.series {
        let label = classify(&s.sites, &cfg.classifier)?;
        wtr.write_record([
            s.offender_id.clone(),
            label.kind.to_string(),
            label.clusters.len().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RankedCell {
    rank: usize,
    row: usize,
    col: usize,
    easting: f64,
    northing: f64,
    mass: f64,
}

#[derive(Debug, Serialize)]
struct ProfileSidecar<'a> {
    offender_id: &'a str,
    method: &'a str,
    subtype: String,
    n_clusters: usize,
    n_crimes: usize,
    grid: Grid,
    seed: u64,
    top_cells: Vec<RankedCell>,
}

/// Files written by `profile`.
#[derive(Debug, Clone)]
pub struct ProfileOutput {
    pub surface_csv: PathBuf,
    pub heatmap_pgm: PathBuf,
    pub sidecar_json: PathBuf,
    pub surface: PosteriorSurface,
}

fn file_stem(offender_id: &str, method: MethodId) -> String {
    let safe: String = offender_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("profile_{safe}_{method}")
}

pub fn write_surface_csv<W: Write>(s: &PosteriorSurface, output: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["row", "col", "easting", "northing", "mass"])?;
    for row in 0..s.grid.nrows {
        for col in 0..s.grid.ncols {
            let c = s.grid.cell_center(row, col)?;
            wtr.write_record([
                row.to_string(),
                col.to_string(),
                format!("{:.6}", c.easting),
                format!("{:.6}", c.northing),
                s.at(row, col).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Binary 8-bit PGM, north up; mass rescaled linearly so the maximum is 255.
pub fn write_pgm<W: Write>(s: &PosteriorSurface, mut output: W) -> Result<()> {
    let max = s.mass.iter().copied().fold(0.0, f64::max);
    write!(output, "P5\n{} {}\n255\n", s.grid.ncols, s.grid.nrows)?;
    let mut pixels = Vec::with_capacity(s.mass.len());
    for row in (0..s.grid.nrows).rev() {
        for col in 0..s.grid.ncols {
            let v = if max > 0.0 {
                (255.0 * s.at(row, col) / max).round()
            } else {
                0.0
            };
            pixels.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    output.write_all(&pixels)?;
    output.flush()?;
    Ok(())
}

pub fn cmd_profile(
    ds: &Dataset,
    cfg: &RunConfig,
    offender_id: &str,
    method: MethodId,
    export_priors: bool,
) -> Result<ProfileOutput> {
    let context = |e: Error| Error::Data(format!("offender {offender_id}, method {method}: {e}"));
    let series = ds
        .get(offender_id)
        .ok_or_else(|| Error::UnknownOffender(offender_id.to_string()))?;
    let label = classify(&series.sites, &cfg.classifier).map_err(context)?;

    let surface = if method == MethodId::Rossmo {
        default_params(series, &cfg.grid)
            .and_then(|p| hit_score_surface(series, &cfg.grid, &p))
            .map_err(context)?
    } else {
        let labels = label_dataset(ds, &cfg.classifier)?;
        let priors = build_prior_set(ds, offender_id, &labels, &cfg.grid).map_err(context)?;
        if export_priors {
            std::fs::create_dir_all(&cfg.out_dir)?;
            for kind in ParamKind::ALL {
                let path = cfg
                    .out_dir
                    .join(format!("{}_prior_{}.csv", file_stem(offender_id, method), kind.name()));
                priors.get(kind)?.write_csv(BufWriter::new(File::create(path)?))?;
            }
        }
        run_method(series, method, &label, &priors, &cfg.engine()).map_err(context)?
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let stem = file_stem(offender_id, method);
    let surface_csv = cfg.out_dir.join(format!("{stem}.csv"));
    let heatmap_pgm = cfg.out_dir.join(format!("{stem}.pgm"));
    let sidecar_json = cfg.out_dir.join(format!("{stem}.json"));
    write_surface_csv(&surface, BufWriter::new(File::create(&surface_csv)?))?;
    write_pgm(&surface, BufWriter::new(File::create(&heatmap_pgm)?))?;

    let top_cells = rank_cells(&surface)
        .into_iter()
        .take(TOP_CELLS)
        .enumerate()
        .map(|(i, (row, col))| {
            let c = surface.grid.cell_center(row, col)?;
            Ok(RankedCell {
                rank: i + 1,
                row,
                col,
                easting: c.easting,
                northing: c.northing,
                mass: surface.at(row, col),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sidecar = ProfileSidecar {
        offender_id,
        method: method.as_str(),
        subtype: label.kind.to_string(),
        n_clusters: label.clusters.len(),
        n_crimes: series.n(),
        grid: surface.grid,
        seed: cfg.seed,
        top_cells,
    };
    let mut w = BufWriter::new(File::create(&sidecar_json)?);
    serde_json::to_writer_pretty(&mut w, &sidecar)?;
    writeln!(w)?;
    w.flush()?;

    Ok(ProfileOutput {
        surface_csv,
        heatmap_pgm,
        sidecar_json,
        surface,
    })
}

/// Runs the comparison, writes `results.csv`, `curves.csv` and
/// `failures.csv` into the output directory and returns the printed table
/// and the number of failure records.
pub fn cmd_evaluate(ds: &Dataset, cfg: &RunConfig) -> Result<(String, usize)> {
    let report = compare_methods(ds, &cfg.methods, cfg.scope, &cfg.evaluation())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    report.write_results_csv(BufWriter::new(File::create(cfg.out_dir.join("results.csv"))?))?;
    report.write_curves_csv(BufWriter::new(File::create(cfg.out_dir.join("curves.csv"))?))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(cfg.out_dir.join("failures.csv"))?));
    wtr.write_record(["offender_id", "method", "message"])?;
    for f in &report.failures {
        wtr.write_record([
            f.offender_id.as_str(),
            f.method.map(MethodId::as_str).unwrap_or(""),
            f.message.as_str(),
        ])?;
    }
    wtr.flush()?;
    for m in &cfg.methods {
        if report.curve(*m).is_none() {
            return Err(Error::Data(format!("method {m} failed for every offender")));
        }
    }
    Ok((report.table(), report.failures.len()))
}

pub fn cmd_emit_grid<W: Write>(grid: &Grid, output: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["row", "col", "easting", "northing"])?;
    for row in 0..grid.nrows {
        for col in 0..grid.ncols {
            let c = grid.cell_center(row, col)?;
            wtr.write_record([
                row.to_string(),
                col.to_string(),
                format!("{:.6}", c.easting),
                format!("{:.6}", c.northing),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Execute a parsed command line. Exit status 0 means no error records were
/// produced; 2 means `evaluate` finished but recorded per-offender failures.
pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Convert(common) => {
            let cfg = resolve(&common)?;
            let path = dataset_path(&cfg)?;
            let input = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            cmd_convert(input, sink(common.out.as_deref())?)?;
        }
        Command::Classify(common) => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            cmd_classify(&open_dataset(&cfg)?, &cfg, sink(common.out.as_deref())?)?;
        }
        Command::Profile {
            common,
            offender,
            method,
            export_priors,
        } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            let method: MethodId = method.parse()?;
            let out = cmd_profile(&open_dataset(&cfg)?, &cfg, &offender, method, export_priors)?;
            println!("{}", out.surface_csv.display());
            println!("{}", out.heatmap_pgm.display());
            println!("{}", out.sidecar_json.display());
        }
        Command::Evaluate { common, method, scope } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = method {
                cfg.methods = parse_methods(&m)?;
            }
            if let Some(s) = scope {
                cfg.scope = s.parse()?;
            }
            cfg.validate()?;
            let (table, failures) = cmd_evaluate(&open_dataset(&cfg)?, &cfg)?;
            print!("{table}");
            if failures > 0 {
                eprintln!("{failures} failure record(s); see failures.csv");
                return Ok(ExitCode::from(2));
            }
        }
        Command::EmitGrid(common) => {
            let cfg = resolve(&common)?;
            cfg.grid.validate()?;
            cmd_emit_grid(&cfg.grid, sink(common.out.as_deref())?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
