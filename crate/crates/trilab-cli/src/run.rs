//! Subcommand orchestration and artifact emission.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result, bail};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::RngExt;
use serde::Serialize;
use serde_json::{Value, json};
use sha2::{Digest, Sha256};
use trilab::experiments::{self, RecursionConfig, ScalingSeries, SquashedCapConfig, TrendConfig};
use trilab::geometry::{self, HypersurfacePatch};
use trilab::models;
use trilab::numeric::{fit_loglog, seeded_rng, unravel};
use trilab::packets::{self, PacketDecomposition};
use trilab::tables::{self, Cube};
use trilab::waves::{self, FreeWave, FrequencyGrid, SpaceTimeCube, WaveBasis};

use crate::config::{RunConfig, Subcommand, Surface};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest phase advance per space-time sample cell before a warning is printed.
const PHASE_PER_CELL_LIMIT: f64 = std::f64::consts::FRAC_PI_4;

/// One invariant evaluated during a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Result of a run: invariant checks plus text for standard output.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub stdout: String,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 when every check holds, 2 when one fails.
    pub fn exit_code(&self) -> u8 {
        if self.passed() { 0 } else { 2 }
    }
}

/// Rows with a mandatory header; every row repeats the parameters that produced it.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the echoed configuration.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

struct Artifacts {
    table: Table,
    results: Value,
    checks: Vec<Check>,
    stdout: String,
    warnings: Vec<String>,
    /// Extra files relative to the output directory.
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn new(table: Table) -> Self {
        Self {
            table,
            results: Value::Null,
            checks: Vec::new(),
            stdout: String::new(),
            warnings: Vec::new(),
            files: Vec::new(),
        }
    }
}

/// Runs the configured subcommand and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let art = match cfg.subcommand {
        Subcommand::GeometryCheck => geometry_check(cfg)?,
        Subcommand::Extend => extend(cfg)?,
        Subcommand::PacketsDecompose => packets_decompose(cfg)?,
        Subcommand::PacketsCensus => packets_census(cfg)?,
        Subcommand::TableBuild => table_build(cfg)?,
        Subcommand::TableCensus => table_census(cfg)?,
        Subcommand::CounterexampleRun => counterexample_run(cfg)?,
        Subcommand::RecursionIterate => recursion_iterate(cfg)?,
        Subcommand::TrendRun => trend_run(cfg)?,
        Subcommand::Threshold => threshold(cfg)?,
    };
    let csv = art.table.to_csv()?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": cfg.subcommand.words(),
        "seed": cfg.seed,
        "config_hash": config_hash(cfg)?,
        "config": cfg,
        "checks": art.checks,
        "results": art.results,
    });
    let mut stdout = art.stdout;
    match &cfg.output {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
            let stem = cfg.subcommand.stem();
            write(dir, &format!("{stem}.csv"), &csv)?;
            write(dir, &format!("{stem}.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            for (name, text) in &art.files {
                write(dir, name, text)?;
            }
        }
        None if stdout.is_empty() => stdout = csv,
        None => {}
    }
    Ok(Outcome {
        checks: art.checks,
        stdout,
        warnings: art.warnings,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn single_patch(cfg: &RunConfig) -> Result<HypersurfacePatch> {
    let (n, hw) = (cfg.n, cfg.half_width);
    Ok(match cfg.surface {
        Surface::DoubleCone | Surface::DegenerateCone => models::double_cone(n, hw)?,
        Surface::Cylinder => models::cylinder(n, hw)?,
        Surface::SphereCap => models::sphere_cap(n, n, hw)?,
        Surface::Flat => models::flat(n, n, hw)?,
    })
}

fn triple(cfg: &RunConfig) -> Result<Vec<HypersurfacePatch>> {
    if cfg.n != 3 {
        bail!("`{}` needs n = 3, got n = {}", cfg.subcommand.words(), cfg.n);
    }
    Ok(match cfg.surface {
        Surface::DoubleCone => models::double_cone_triple(cfg.half_width)?,
        Surface::DegenerateCone => models::degenerate_cone_triple(cfg.half_width)?,
        other => bail!("surface {} has no triple model", serde_json::to_string(&other)?),
    })
}

fn surface_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.surface).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Warns when unit-scale frequencies turn by more than `PHASE_PER_CELL_LIMIT` per sample cell.
fn phase_warning(wave: &FreeWave, cell: f64) -> Option<String> {
    let basis = &wave.basis;
    let reach = (0..wave.grid().len())
        .map(|k| basis.patch.embed_local(basis.node(k)).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let per_cell = reach * cell;
    (per_cell > PHASE_PER_CELL_LIMIT).then(|| format!("phase advance per sample cell is {per_cell:.3} rad, above pi/4"))
}

fn geometry_check(cfg: &RunConfig) -> Result<Artifacts> {
    let mut art = Artifacts::new(Table::new(&["surface", "n", "half_width", "samples", "seed", "metric", "value"]));
    let params = |cfg: &RunConfig| {
        vec![surface_name(cfg), cfg.n.to_string(), fmt_f64(cfg.half_width), cfg.samples.to_string(), cfg.seed.to_string()]
    };
    let mut metrics: Vec<(&str, f64)> = Vec::new();
    let patch = single_patch(cfg)?;
    let mut rng = seeded_rng(cfg.seed);
    let (mut flat_max, mut curved_min, mut flat_counts) = (0.0f64, f64::INFINITY, Vec::new());
    for _ in 0..cfg.samples {
        let xi = patch.sample(&mut rng)?;
        let s = patch.shape_operator(&xi)?;
        let flat: Vec<f64> = s.eigenvalues.iter().map(|l| l.abs()).filter(|l| *l < 1e-9).collect();
        flat_max = flat.iter().copied().fold(flat_max, f64::max);
        curved_min = s.eigenvalues.iter().map(|l| l.abs()).filter(|l| *l >= 1e-9).fold(curved_min, f64::min);
        flat_counts.push(flat.len());
    }
    let vanishing = flat_counts.iter().copied().min().unwrap_or(0);
    metrics.push(("vanishing_curvatures_min", vanishing as f64));
    metrics.push(("vanishing_curvatures_max", flat_counts.iter().copied().max().unwrap_or(0) as f64));
    metrics.push(("largest_vanishing_curvature", flat_max));
    metrics.push(("smallest_nonvanishing_curvature", curved_min));
    if patch.leaf_chart.is_some() {
        let f = geometry::check_foliation_flatness(&patch, cfg.samples, cfg.seed)?;
        metrics.push(("leaf_flatness_max", f.leaf_flatness_max));
        art.checks.push(check("leaves_flat", !f.flagged, format!("flatness {:.3e}", f.leaf_flatness_max)));
    }
    let tri = match cfg.surface {
        Surface::DoubleCone | Surface::DegenerateCone if cfg.n == 3 => Some(triple(cfg)?),
        _ => None,
    };
    if let Some(tri) = tri {
        let report = geometry::condition_report(&tri, 0, cfg.samples, cfg.seed)?;
        let gl = geometry::gl_constant(&tri, 0, cfg.samples, cfg.seed)?;
        metrics.push(("nu_transversal", report.nu_transversal));
        if let Some(v) = report.nu_curvature {
            metrics.push(("nu_curvature", v));
        }
        if let Some((lo, hi)) = report.dispersion_ratio_range {
            metrics.push(("dispersion_ratio_min", lo));
            metrics.push(("dispersion_ratio_max", hi));
        }
        metrics.push(("gl_constant", gl.kappa));
        metrics.push(("gl_violations", gl.inequality_violations as f64));
        art.checks.push(check(
            "transversal",
            report.nu_transversal >= 0.01,
            format!("nu {:.4}", report.nu_transversal),
        ));
        art.checks.push(check(
            "separation",
            !gl.degenerate && gl.inequality_violations == 0,
            format!("kappa {:.4e}, {} violations", gl.kappa, gl.inequality_violations),
        ));
    }
    for (name, value) in &metrics {
        let mut row = params(cfg);
        row.push(name.to_string());
        row.push(fmt_f64(*value));
        art.table.push(row);
    }
    art.results = json!({ "metrics": metrics.iter().map(|(k, v)| json!({ "metric": k, "value": v })).collect::<Vec<_>>() });
    Ok(art)
}

/// Wave from `input`, or amplitude one on a `resolution`-per-axis grid over the patch domain.
fn load_or_unit_wave(cfg: &RunConfig, patch: &HypersurfacePatch) -> Result<FreeWave> {
    match &cfg.input {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read wave file {}", path.display()))?;
            let (grid, amps) = waves::read_wave_text(&text)?;
            Ok(FreeWave::new(WaveBasis::new(patch.clone(), grid)?, amps)?)
        }
        None => {
            let d = &patch.domain;
            let grid = FrequencyGrid::new(d.lo.clone(), d.hi.clone(), vec![cfg.resolution; patch.n])?;
            Ok(FreeWave::from_fn(WaveBasis::new(patch.clone(), grid)?, |_| Complex64::new(1.0, 0.0))?)
        }
    }
}

fn extend(cfg: &RunConfig) -> Result<Artifacts> {
    let patch = single_patch(cfg)?;
    let wave = load_or_unit_wave(cfg, &patch)?;
    let d = cfg.n + 1;
    let side = cfg.scales[0];
    let cube = SpaceTimeCube::new(vec![0.0; d], side, cfg.sample_resolution)?;
    let axes = cube.axes();
    let values = wave.extend_tensor(&axes);
    let mut header = vec!["surface".to_string(), "n".into(), "side".into(), "sample_resolution".into()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.extend(["re".into(), "im".into(), "modulus".into()]);
    let mut art = Artifacts::new(Table {
        header,
        rows: Vec::new(),
    });
    let shape = vec![cfg.sample_resolution; d];
    let mut idx = vec![0; d];
    for (f, v) in values.iter().enumerate() {
        unravel(f, &shape, &mut idx);
        let mut row = vec![surface_name(cfg), cfg.n.to_string(), fmt_f64(side), cfg.sample_resolution.to_string()];
        row.extend((0..d).map(|a| fmt_f64(axes[a][idx[a]])));
        row.extend([fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm())]);
        art.table.push(row);
    }
    art.warnings.extend(phase_warning(&wave, side / cfg.sample_resolution as f64));
    art.results = json!({ "mass": wave.mass(), "points": values.len() });
    art.checks.push(check(
        "finite_values",
        values.iter().all(|v| v.re.is_finite() && v.im.is_finite()),
        format!("{} points", values.len()),
    ));
    Ok(art)
}

fn patch_center(patch: &HypersurfacePatch) -> Vec<f64> {
    patch.domain.lo.iter().zip(&patch.domain.hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Interior nodes keep `pad` nodes to each edge so the packet partition needs no wrap-around.
fn interior(res: &[usize], k: usize, pad: usize, idx: &mut [usize]) -> bool {
    unravel(k, res, idx);
    idx.iter().zip(res).all(|(i, r)| *i >= pad && *i + pad < *r)
}

struct PacketRun {
    grid: FrequencyGrid,
    decomposition: PacketDecomposition,
}

/// Decomposes the input wave, or a seeded random wave on the padded interior of the lattice grid.
fn decompose_at(cfg: &RunConfig, patch: &HypersurfacePatch, big_r: f64, seed: u64) -> Result<PacketRun> {
    let grid = packets::lattice_grid(&patch_center(patch), cfg.half_width, big_r, cfg.c, cfg.periods)?;
    let wave = match &cfg.input {
        Some(_) => load_or_unit_wave(cfg, patch)?,
        None => {
            let basis = WaveBasis::new(patch.clone(), grid.clone())?;
            let mut rng = seeded_rng(seed);
            let mut idx = vec![0; grid.dim()];
            let amps = (0..grid.len())
                .map(|k| {
                    let (re, im): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if interior(&grid.res, k, cfg.periods - 1, &mut idx) { Complex64::new(re, im) } else { Complex64::new(0.0, 0.0) }
                })
                .collect();
            FreeWave::new(basis, amps)?
        }
    };
    let lattice = packets::build_lattice(patch, wave.grid(), big_r, cfg.c, packets::period_box(wave.grid()))?;
    let decomposition = packets::decompose(&wave, &lattice)?;
    Ok(PacketRun { grid, decomposition })
}

fn manifest(dec: &PacketDecomposition) -> Value {
    let l = &dec.lattice;
    json!({
        "lattice": {
            "big_r": l.big_r, "level": l.level, "r": l.r, "c": l.c, "spacing": l.spacing,
            "per_axis": l.per_axis, "leaf_ids": l.leaf_ids, "decay_power": l.decay_power,
        },
        "tubes": dec.tubes.iter().zip(&dec.packets).map(|(t, p)| json!({
            "leaf": t.leaf, "position_index": t.position_index, "x_t": t.x_t, "xi_t": t.xi_t,
            "velocity": t.velocity, "mass": p.mass(),
        })).collect::<Vec<_>>(),
    })
}

/// Indices of the `max_tubes` most massive packets, ties broken by index.
fn kept_tubes(dec: &PacketDecomposition, max_tubes: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dec.tubes.len()).collect();
    order.sort_by(|a, b| dec.packets[*b].mass().total_cmp(&dec.packets[*a].mass()).then(a.cmp(b)));
    order.truncate(max_tubes.unwrap_or(order.len()));
    order.sort_unstable();
    order
}

fn packets_decompose(cfg: &RunConfig) -> Result<Artifacts> {
    let patch = single_patch(cfg)?;
    let big_r = cfg.scales[0];
    let PacketRun { grid, decomposition: dec } = decompose_at(cfg, &patch, big_r, cfg.seed)?;
    let n = cfg.n;
    let mut header: Vec<String> = ["surface", "big_r", "c", "periods", "seed", "tube", "leaf"].map(String::from).to_vec();
    header.extend((0..n).map(|a| format!("x_t{a}")));
    header.extend((0..n).map(|a| format!("xi_t{a}")));
    header.push("mass".into());
    let mut art = Artifacts::new(Table {
        header,
        rows: Vec::new(),
    });
    for (i, (t, p)) in dec.tubes.iter().zip(&dec.packets).enumerate() {
        let mut row = vec![surface_name(cfg), fmt_f64(big_r), fmt_f64(cfg.c), cfg.periods.to_string(), cfg.seed.to_string()];
        row.extend([i.to_string(), t.leaf.to_string()]);
        row.extend(t.x_t.iter().map(|v| fmt_f64(*v)));
        row.extend(t.xi_t.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(p.mass()));
        art.table.push(row);
    }
    let kept = kept_tubes(&dec, cfg.max_tubes);
    for &i in &kept {
        art.files.push((format!("tubes/tube_{i:05}.txt"), waves::write_wave_text(&dec.packets[i])));
    }
    let (err, loc, loss) = (dec.reconstruction_error(), dec.localization(), dec.margin_loss());
    art.checks.push(check("reconstruction", err <= 1e-10, format!("relative error {err:.3e}")));
    art.checks.push(check("localization", loc <= 2.0, format!("{loc:.4} / r")));
    art.checks.push(check("margin", loss >= -2.0, format!("{loss:.4} / r")));
    art.results = json!({
        "grid_res": grid.res,
        "source_mass": dec.source.mass(),
        "packet_mass_sum": dec.packet_mass_sum(),
        "reconstruction_error": err,
        "localization": loc,
        "margin_loss": loss,
        "tube_files": kept.len(),
        "manifest": manifest(&dec),
    });
    Ok(art)
}

fn packets_census(cfg: &RunConfig) -> Result<Artifacts> {
    let patch = single_patch(cfg)?;
    let mut art = Artifacts::new(Table::new(&[
        "surface", "big_r", "c", "periods", "seed", "r", "tubes", "local_mass_constant", "weighted_mass_ratio",
    ]));
    let mut rows = Vec::new();
    for &big_r in &cfg.scales {
        let run = decompose_at(cfg, &patch, big_r, cfg.seed)?;
        let dec = &run.decomposition;
        let cube = SpaceTimeCube::new(vec![0.0; cfg.n + 1], big_r, 1)?;
        let kappa = packets::local_mass_census(dec, &cube, 2)?;
        let mut rng = seeded_rng(cfg.seed);
        let cols = 8;
        let raw = DMatrix::from_fn(dec.tubes.len(), cols, |_, _| rng.random_range(0.0..1.0));
        let weights = DMatrix::from_fn(raw.nrows(), cols, |i, j| raw[(i, j)] / raw.row(i).sum());
        let report = packets::weighted_mass_check(dec, &weights, cfg.c, 0.2)?;
        let root = dec.source.mass().sqrt();
        let ratio = if root > 0.0 { report.lhs / root } else { 0.0 };
        art.checks.push(check(
            &format!("weighted_mass_r{big_r}"),
            report.pass,
            format!("lhs {:.6e} rhs {:.6e}", report.lhs, report.rhs),
        ));
        art.table.push(vec![
            surface_name(cfg),
            fmt_f64(big_r),
            fmt_f64(cfg.c),
            cfg.periods.to_string(),
            cfg.seed.to_string(),
            fmt_f64(dec.lattice.r),
            dec.tubes.len().to_string(),
            fmt_f64(kappa),
            fmt_f64(ratio),
        ]);
        rows.push(json!({ "big_r": big_r, "local_mass_constant": kappa, "weighted_mass_ratio": ratio }));
    }
    art.results = json!({ "scales": rows });
    Ok(art)
}

fn unit_interior(basis: std::sync::Arc<WaveBasis>, pad: usize) -> Result<FreeWave> {
    let res = basis.grid.res.clone();
    let mut idx = vec![0; res.len()];
    let amps = (0..basis.grid.len())
        .map(|k| if interior(&res, k, pad, &mut idx) { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok(FreeWave::new(basis, amps)?)
}

fn table_build(cfg: &RunConfig) -> Result<Artifacts> {
    let tri = triple(cfg)?;
    let big_r = cfg.scales[0];
    let grid = packets::lattice_grid(&patch_center(&tri[0]), cfg.half_width, big_r, cfg.c, cfg.periods)?;
    let waves: Vec<FreeWave> = tri
        .iter()
        .map(|p| unit_interior(WaveBasis::new(p.clone(), grid.clone())?, cfg.periods - 1))
        .collect::<Result<_>>()?;
    let lattice = packets::build_lattice(&tri[0], &grid, big_r, cfg.c, packets::period_box(&grid))?;
    let dec = packets::decompose(&waves[0], &lattice)?;
    let q = Cube::new(vec![0.0; 4], big_r);
    let weights = tables::tube_weights(&dec, &waves[1], &q, cfg.depth, cfg.sample_resolution.max(2))?;
    let table = tables::build_table(&dec, &weights, cfg.depth)?;
    let subcubes = table.coefficients.ncols();
    let mut header: Vec<String> = ["surface", "big_r", "c", "depth", "tube"].map(String::from).to_vec();
    header.extend((0..subcubes).map(|q| format!("q{q}")));
    let mut art = Artifacts::new(Table {
        header,
        rows: Vec::new(),
    });
    for (t, row) in table.coefficients.row_iter().enumerate() {
        let mut out = vec![surface_name(cfg), fmt_f64(big_r), fmt_f64(cfg.c), cfg.depth.to_string(), t.to_string()];
        out.extend(row.iter().map(|v| fmt_f64(*v)));
        art.table.push(out);
    }
    let err = table.decomposition_error(&waves[0]);
    let ratio = table.mass() / waves[0].mass();
    let limit = 1.0 + 10.0 * cfg.c;
    art.checks.push(check("identity", err <= 1e-12, format!("relative error {err:.3e}")));
    art.checks.push(check("mass", ratio <= limit, format!("M(table)/M = {ratio:.4} against {limit:.4}")));
    art.results = json!({
        "identity_error": err,
        "mass_ratio": ratio,
        "zero_rows": table.zero_rows,
        "table_margin": table.margin(),
        "manifest": manifest(&dec),
    });
    Ok(art)
}

fn table_census(cfg: &RunConfig) -> Result<Artifacts> {
    let tri = triple(cfg)?;
    let mut art = Artifacts::new(Table::new(&[
        "surface", "big_r", "c", "level", "r", "max_multiplicity", "pairs_counted", "occurrences", "relation_size",
    ]));
    let mut rows = Vec::new();
    for &big_r in &cfg.scales {
        let (level, r) = packets::dyadic_level(big_r)?;
        let family = tables::subdivide(&Cube::new(vec![0.0; 4], big_r), level as i64)?;
        let reps = |p: &HypersurfacePatch| -> Result<Vec<Vec<f64>>> {
            let g = FrequencyGrid::new(p.domain.lo.clone(), p.domain.hi.clone(), vec![24; 3])?;
            Ok(packets::build_lattice(p, &g, big_r, 1.0, packets::period_box(&g))?.leaf_reps)
        };
        let normals = reps(&tri[0])?.iter().map(|x| tri[0].unit_normal(x)).collect::<std::result::Result<Vec<_>, _>>()?;
        let l2 = tables::tube_lines(&tri[1], &reps(&tri[1])?, r, 2.5 * big_r, &family);
        let l3 = tables::tube_lines(&tri[2], &reps(&tri[2])?, r, 2.5 * big_r, &family);
        let report = tables::pair_census(&l2, &l3, &family, &normals, cfg.c, 1.5)?;
        art.table.push(vec![
            surface_name(cfg),
            fmt_f64(big_r),
            fmt_f64(cfg.c),
            level.to_string(),
            fmt_f64(r),
            report.max_multiplicity.to_string(),
            report.pairs_counted.to_string(),
            report.occurrences.to_string(),
            report.relation_size.to_string(),
        ]);
        rows.push(json!({ "big_r": big_r, "report": report }));
    }
    art.results = json!({ "scales": rows });
    Ok(art)
}

fn counterexample_run(cfg: &RunConfig) -> Result<Artifacts> {
    let config = SquashedCapConfig {
        n: cfg.n,
        k: cfg.k,
        epsilons: cfg.epsilons.clone(),
        c_small: cfg.c_small,
        cap_resolution: vec![cfg.resolution; cfg.n],
        box_resolution: vec![cfg.sample_resolution; cfg.n + 1],
        exponents: cfg.exponents.clone(),
    };
    let records = experiments::squashed_cap_run(&config)?;
    let mut header: Vec<String> = [
        "n", "k", "c_small", "epsilon", "cap_volume", "l2_closed_form", "l2_numeric_max", "min_ratio", "max_phase_deviation",
    ]
    .map(String::from)
    .to_vec();
    for p in &cfg.exponents {
        header.push(format!("norm_p{p}"));
        header.push(format!("normalized_p{p}"));
    }
    let mut art = Artifacts::new(Table {
        header,
        rows: Vec::new(),
    });
    for r in &records {
        let mut row = vec![
            cfg.n.to_string(),
            cfg.k.to_string(),
            fmt_f64(cfg.c_small),
            fmt_f64(r.epsilon),
            fmt_f64(r.cap_volume),
            fmt_f64(r.l2_closed_form),
            fmt_f64(r.l2_numeric.iter().copied().fold(0.0, f64::max)),
            fmt_f64(r.min_ratio),
            fmt_f64(r.max_phase_deviation),
        ];
        for (raw, normalized) in r.norms.iter().zip(&r.normalized_norms) {
            row.push(fmt_f64(raw.1));
            row.push(fmt_f64(normalized.1));
        }
        art.table.push(row);
    }
    let theta = experiments::certified_factor(cfg.c_small);
    let min_ratio = records.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min);
    let max_dev = records.iter().map(|r| r.max_phase_deviation).fold(0.0, f64::max);
    let l2_gap = records
        .iter()
        .flat_map(|r| r.l2_numeric.iter().map(move |v| (v - r.l2_closed_form).abs() / r.l2_closed_form))
        .fold(0.0, f64::max);
    art.checks.push(check("pointwise_ratio", min_ratio >= theta, format!("{min_ratio:.6} against {theta:.6}")));
    art.checks.push(check("phase_deviation", max_dev <= 3.0 * cfg.c_small, format!("{max_dev:.4e}")));
    art.checks.push(check("l2_agreement", l2_gap <= 1e-12, format!("{l2_gap:.3e}")));
    let mut fits = Vec::new();
    if records.len() >= 3 {
        for (i, &p) in cfg.exponents.iter().enumerate() {
            let targets = experiments::slope_targets(cfg.n, cfg.k, p);
            let raw = experiments::scaling_fit(&mut ScalingSeries::from_records(&records, i, false))?;
            let normalized = experiments::scaling_fit(&mut ScalingSeries::from_records(&records, i, true))?;
            fits.push(json!({ "p": p, "raw": raw, "normalized": normalized, "targets": targets }));
        }
    }
    let threshold = experiments::threshold_exponent(cfg.n, cfg.k)?;
    art.results = json!({
        "threshold_exponent": threshold.to_string(),
        "certified_factor": theta,
        "fits": fits,
        "records": records,
    });
    Ok(art)
}

fn recursion_iterate(cfg: &RunConfig) -> Result<Artifacts> {
    let mut art = Artifacts::new(Table::new(&[
        "n", "p", "loss_exponent", "c0", "loss_epsilon", "exponent", "classification", "closed_form", "decided", "steps",
        "final_log2_scale", "final_log_bound",
    ]));
    let mut traces = Vec::new();
    for &p in &cfg.exponents {
        let rc = RecursionConfig {
            n: cfg.n,
            p,
            big_c: cfg.loss_exponent,
            c0: cfg.c0,
            epsilon: cfg.loss_epsilon,
            ..RecursionConfig::standard(p)
        };
        let trace = experiments::recursion_iterate(&rc)?;
        let closed = experiments::closed_form_classification(cfg.n, p, cfg.loss_epsilon);
        let label = |c: experiments::Classification| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        art.checks.push(check(
            &format!("classification_p{p}"),
            trace.decided && trace.classification == closed,
            format!("{} against closed form {}", label(trace.classification), label(closed)),
        ));
        art.table.push(vec![
            cfg.n.to_string(),
            fmt_f64(p),
            fmt_f64(cfg.loss_exponent),
            fmt_f64(cfg.c0),
            fmt_f64(cfg.loss_epsilon),
            fmt_f64(trace.exponent),
            label(trace.classification),
            label(closed),
            trace.decided.to_string(),
            trace.steps().to_string(),
            fmt_f64(*trace.log2_scales.last().unwrap_or(&f64::NAN)),
            fmt_f64(*trace.log_bounds.last().unwrap_or(&f64::NAN)),
        ]);
        traces.push(json!({ "p": p, "exponent": trace.exponent, "classification": trace.classification, "steps": trace.steps() }));
    }
    art.results = json!({ "runs": traces });
    Ok(art)
}

fn trend_run(cfg: &RunConfig) -> Result<Artifacts> {
    if cfg.surface != Surface::DoubleCone || cfg.n != 3 {
        bail!("`trend run` measures the standard double-cone triple; set surface = double-cone and n = 3");
    }
    let tc = TrendConfig {
        half_width: cfg.half_width,
        grid_resolution: cfg.resolution,
        sample_count: cfg.samples,
        seed: cfg.seed,
        ..TrendConfig::default()
    };
    let mut art = Artifacts::new(Table::new(&["p", "half_width", "resolution", "seed", "big_r", "ratio", "nu_transversal"]));
    let mut reports = Vec::new();
    for &p in &cfg.exponents {
        let report = experiments::double_cone_trend(p, &cfg.scales, &tc, |_, _| Complex64::new(1.0, 0.0))?;
        for (r, ratio) in report.scales.iter().zip(&report.ratios) {
            art.table.push(vec![
                fmt_f64(p),
                fmt_f64(cfg.half_width),
                cfg.resolution.to_string(),
                cfg.seed.to_string(),
                fmt_f64(*r),
                fmt_f64(*ratio),
                fmt_f64(report.nu_transversal),
            ]);
        }
        art.checks.push(check(
            &format!("finite_ratios_p{p}"),
            report.ratios.iter().all(|r| r.is_finite()),
            fmt_list(&report.ratios),
        ));
        reports.push(report);
    }
    art.results = json!({
        "density": "unit",
        "note": "heuristic trend for one family of densities",
        "fits_from_ratios": reports.iter().map(|r| fit_loglog(&r.scales, &r.ratios)).collect::<Vec<_>>(),
        "reports": reports,
    });
    Ok(art)
}

fn threshold(cfg: &RunConfig) -> Result<Artifacts> {
    let p = experiments::threshold_exponent(cfg.n, cfg.k)?;
    let mut art = Artifacts::new(Table::new(&["n", "k", "numerator", "denominator", "value"]));
    art.table.push(vec![
        cfg.n.to_string(),
        cfg.k.to_string(),
        p.numer().to_string(),
        p.denom().to_string(),
        fmt_f64(*p.numer() as f64 / *p.denom() as f64),
    ]);
    art.stdout = format!("{p}\n");
    art.results = json!({ "threshold_exponent": p.to_string() });
    Ok(art)
}
