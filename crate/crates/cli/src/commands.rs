use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use infocomp::bench::{
    continuity_circle, gen_nine_space_suite, gen_planted_channels, gen_separated_gaussians, gen_so2_weak,
    group_agreement, PlantedParams, NINE_SPACE_NAMES,
};
use infocomp::channels::{
    factor_info_column, posterior_channels, run_pipeline, ChannelRef, OpticsParams, PipelineConfig,
};
use infocomp::estimators::{info_kt, info_mc};
use infocomp::fingerprint::{fingerprint_discrete_soft, fingerprint_gaussian};
use infocomp::fusion::{fuse, FusionConfig, Objective};
use infocomp::io::{self, Dtype};
use infocomp::posterior::marginal_channel;
use infocomp::similarity::{
    cka_bc, exact_terms, mc_terms, mutual_information, nmi, nmi_exact, nmi_mc, vi, vi_exact, vi_mc,
};
use infocomp::{DiscreteSoftClustering, ErrorClass, Fingerprint, McConfig, PosteriorSet, SampleIds, SimilarityValue, SpaceId};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::output::{num, text, Format, Table};
use crate::{
    ChannelsArgs, Cli, Command, CompareArgs, CompareMcArgs, ContinuityArgs, DtypeArg, FingerprintArgs, FuseArgs,
    InfoArgs, MeasureArg, ObjectiveArg, SynthArgs, SynthKind,
};

/// Below this mean off-diagonal coefficient a fused space counts as scattered.
const SCATTERED_BC: f64 = 0.05;
/// Margin to `log2 N` within which the bound is reported as saturated.
const SATURATION_MARGIN_BITS: f64 = 0.1;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs rejected before computing.
    Usage(String),
    Io(String),
    Lib(infocomp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Lib(e) => match e.class() {
                ErrorClass::Io => 1,
                ErrorClass::Validation => 2,
                ErrorClass::Numeric => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<infocomp::Error> for CliError {
    fn from(e: infocomp::Error) -> Self {
        CliError::Lib(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Ctx {
    seed: u64,
    output_dir: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn out(&self, flag: Option<PathBuf>, default: &str) -> PathBuf {
        let base = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        match flag {
            Some(p) if p.is_absolute() => p,
            Some(p) => base.join(p),
            None => base.join(default),
        }
    }
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("input {} does not exist", path.display())))
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(usage("--threads must be positive")),
        Some(t) => {
            // Only fails if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            Ok(())
        }
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let ctx = Ctx {
        seed: cli.seed,
        output_dir: cli.output_dir,
        format: cli.format,
    };
    match cli.command {
        Command::Fingerprint(a) => cmd_fingerprint(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
        Command::CompareMc(a) => cmd_compare_mc(&ctx, a),
        Command::Channels(a) => cmd_channels(&ctx, a),
        Command::Fuse(a) => cmd_fuse(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Continuity(a) => cmd_continuity(&ctx, a),
        Command::Info(a) => cmd_info(&ctx, a),
    }
}

/// `sample` data points drawn without replacement, kept in their original order.
fn subsample(set: PosteriorSet, sample: usize, seed: u64) -> Result<PosteriorSet> {
    if sample < 2 {
        return Err(usage("--sample must be at least 2"));
    }
    if sample >= set.len() {
        return Ok(set);
    }
    let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), set.len(), sample).into_vec();
    idx.sort_unstable();
    Ok(set.select(&idx)?)
}

fn parse_dims(spec: &str, d: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..d).collect());
    }
    let mut dims = Vec::new();
    for part in spec.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("--dims: {part:?} is not a channel index")))?;
        if k >= d {
            return Err(usage(format!("--dims: channel {k} out of range for d = {d}")));
        }
        dims.push(k);
    }
    Ok(dims)
}

fn cmd_fingerprint(ctx: &Ctx, a: FingerprintArgs) -> Result<()> {
    let set = io::read_posterior_set(existing(&a.input)?)?;
    let dims = a.dims.as_deref().map(|s| parse_dims(s, set.dim())).transpose()?;
    let set = subsample(set, a.sample, ctx.seed)?;
    let dtype = match a.dtype {
        DtypeArg::F32le => Dtype::F32Le,
        DtypeArg::F64le => Dtype::F64Le,
    };
    let out = ctx.out(a.out, "fingerprint");
    let mut table = Table::new(&["path", "space_id", "n"]);
    let mut write = |fp: &Fingerprint, path: PathBuf| -> Result<()> {
        io::write_fingerprint(fp, &path, dtype)?;
        table.row(vec![
            text(path.display().to_string()),
            text(fp.space_id().to_string()),
            json!(fp.len()),
        ]);
        Ok(())
    };
    match dims {
        None => write(&fingerprint_gaussian(&set), out)?,
        Some(dims) => {
            for k in dims {
                let fp = fingerprint_gaussian(&marginal_channel(&set, k)?);
                write(&fp, out.join(format!("ch{k}")))?;
            }
        }
    }
    table.print(ctx.format);
    Ok(())
}

/// A fingerprint directory, or a posterior set fingerprinted on the fly.
fn load_fingerprint(path: &Path, repair: bool) -> Result<Fingerprint> {
    let m = io::read_manifest(existing(path)?)?;
    if m.kind == io::KIND_POSTERIOR_SET {
        Ok(fingerprint_gaussian(&io::read_posterior_set(path)?))
    } else {
        Ok(io::read_fingerprint(path, repair)?)
    }
}

/// A `sample_id,label` CSV as a one-hot clustering, or a membership CSV.
fn read_clustering(path: &Path, reference: Option<&SampleIds>) -> Result<(SampleIds, DiscreteSoftClustering)> {
    let first = fs::read_to_string(existing(path)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .lines()
        .next()
        .unwrap_or_default()
        .replace(' ', "");
    if first == "sample_id,label" {
        let (ids, h) = io::read_hard_labels(path, reference)?;
        Ok((ids, h.to_soft()))
    } else {
        Ok(io::read_memberships(path, reference)?)
    }
}

fn measure_name(v: &SimilarityValue) -> String {
    serde_json::to_value(v.measure)
        .ok()
        .and_then(|m| m.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn print_value(ctx: &Ctx, v: &SimilarityValue) {
    let undefined = v
        .undefined
        .and_then(|u| serde_json::to_value(u).ok())
        .and_then(|u| u.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut t = Table::new(&["measure", "estimator", "value", "std_err", "undefined_reason"]);
    t.row(vec![
        text(measure_name(v)),
        text(v.estimator.to_string()),
        num(v.value),
        num(v.std_err),
        text(undefined),
    ]);
    t.print(ctx.format);
}

fn cmd_compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    let value = if a.exact {
        let (ids, ca) = read_clustering(&a.a, None)?;
        let (_, cb) = read_clustering(&a.b, Some(&ids))?;
        match a.measure {
            MeasureArg::Nmi => nmi_exact(&ca, &cb)?,
            MeasureArg::Vi => vi_exact(&ca, &cb)?,
            MeasureArg::Mi => exact_terms(&ca, &cb)?.mi(),
            MeasureArg::Cka => cka_bc(&fingerprint_discrete_soft(&ca), &fingerprint_discrete_soft(&cb))?,
        }
    } else {
        let fa = load_fingerprint(&a.a, a.repair)?;
        let fb = load_fingerprint(&a.b, a.repair)?;
        match a.measure {
            MeasureArg::Nmi => nmi(&fa, &fb)?,
            MeasureArg::Vi => vi(&fa, &fb)?,
            MeasureArg::Mi => mutual_information(&fa, &fb)?,
            MeasureArg::Cka => cka_bc(&fa, &fb)?,
        }
    };
    print_value(ctx, &value);
    Ok(())
}

fn cmd_compare_mc(ctx: &Ctx, a: CompareMcArgs) -> Result<()> {
    let cfg = McConfig::new(a.n_samples, a.agg_fraction, ctx.seed)?;
    let u = io::read_posterior_set(existing(&a.a)?)?;
    let v = io::read_posterior_set(existing(&a.b)?)?;
    let value = match a.measure {
        MeasureArg::Nmi => nmi_mc(&u, &v, &cfg)?,
        MeasureArg::Vi => vi_mc(&u, &v, &cfg)?,
        MeasureArg::Mi => mc_terms(&u, &v, &cfg)?.mi(),
        MeasureArg::Cka => return Err(usage("compare-mc supports nmi, vi and mi")),
    };
    print_value(ctx, &value);
    Ok(())
}

/// `ref,group` CSV; an empty group marks a channel planted as uninformative.
fn read_truth(path: &Path) -> Result<HashMap<String, Option<usize>>> {
    let mut rdr = csv::Reader::from_path(existing(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let group = match rec.get(1).map(str::trim) {
            None | Some("") => None,
            Some(g) => Some(
                g.parse()
                    .map_err(|_| usage(format!("{}: bad group {g:?}", path.display())))?,
            ),
        };
        out.insert(rec[0].trim().to_string(), group);
    }
    Ok(out)
}

fn cmd_channels(ctx: &Ctx, a: ChannelsArgs) -> Result<()> {
    let cfg = PipelineConfig {
        threshold_bits: a.threshold_bits,
        optics: OpticsParams {
            min_samples: a.min_samples,
            xi: a.xi,
        },
    };
    if !(a.threshold_bits >= 0.0) {
        return Err(usage("--threshold-bits must be non-negative"));
    }
    if a.min_samples < 2 || !(a.xi > 0.0 && a.xi < 1.0) {
        return Err(usage("--min-samples must be at least 2 and --xi in (0, 1)"));
    }
    let truth = a.truth.as_deref().map(read_truth).transpose()?;
    let sets = io::read_posterior_ensemble(existing(&a.ensemble)?)?;
    if sets.is_empty() {
        return Err(usage(format!("no posterior sets under {}", a.ensemble.display())));
    }
    let factors = match &a.factors {
        Some(p) => io::read_factor_table(existing(p)?, Some(sets[0].sample_ids()))?.1,
        None => Vec::new(),
    };
    let n_channels: usize = sets.iter().map(PosteriorSet::dim).sum();
    let report = run_pipeline(posterior_channels(&sets)?, &cfg)?;

    let out = ctx.out(a.out, "channels");
    let refs = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| report.kept[i].to_string()).collect() };
    if let Some(sim) = &report.similarity {
        io::export_matrix_csv(sim, out.join("similarity.csv"))?;
    }
    if let Some(o) = &report.optics {
        io::write_optics_csv(o, &report.kept, out.join("optics.csv"))?;
    }
    let mut factor_json = serde_json::Map::new();
    if !factors.is_empty() {
        let kept: Vec<_> = posterior_channels(&sets)?
            .into_iter()
            .filter(|c| report.kept.contains(&c.reference))
            .collect();
        let mut columns = Vec::new();
        for (name, labels) in &factors {
            let col = factor_info_column(&kept, labels, infocomp::Measure::Nmi)?;
            factor_json.insert(name.clone(), Value::Array(col.iter().map(|&v| num(v)).collect()));
            columns.push(col);
        }
        write_factor_csv(&out.join("factors.csv"), &report.kept, &factors, &columns)?;
    }
    let groups: Vec<Vec<usize>> = report.optics.as_ref().map(|o| o.groups.clone()).unwrap_or_default();
    let agreement = truth
        .map(|t| {
            let mut next = t.values().flatten().max().map_or(0, |m| m + 1);
            let planted: Vec<usize> = report
                .kept
                .iter()
                .map(|r| {
                    t.get(&r.to_string()).copied().flatten().unwrap_or_else(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect();
            if planted.is_empty() {
                Ok(f64::NAN)
            } else {
                group_agreement(&groups, &planted)
            }
        })
        .transpose()?;

    let json_report = json!({
        "threshold_bits": a.threshold_bits,
        "min_samples": a.min_samples,
        "xi": a.xi,
        "n_channels": n_channels,
        "kept": report.kept.iter().zip(&report.kept_bits).map(|(r, b)| json!({"ref": r.to_string(), "bits": num(*b)})).collect::<Vec<_>>(),
        "dropped": report.dropped.iter().map(ChannelRef::to_string).collect::<Vec<_>>(),
        "groups": groups.iter().map(|g| refs(g)).collect::<Vec<_>>(),
        "representatives": refs(&report.representatives),
        "factors": factor_json,
        "group_agreement": agreement.map_or(Value::Null, num),
    });
    io::write_json(&json_report, out.join("report.json"))?;

    let mut t = Table::new(&["channels", "kept", "groups", "group_agreement", "out"]);
    t.row(vec![
        json!(n_channels),
        json!(report.kept.len()),
        json!(groups.len()),
        agreement.map_or(Value::Null, num),
        text(out.display().to_string()),
    ]);
    t.print(ctx.format);
    Ok(())
}

fn write_factor_csv(
    path: &Path,
    kept: &[ChannelRef],
    factors: &[(String, infocomp::HardClustering)],
    columns: &[Vec<f64>],
) -> Result<()> {
    let mut t = String::from("ref");
    for (name, _) in factors {
        t.push(',');
        t.push_str(name);
    }
    t.push('\n');
    for (i, r) in kept.iter().enumerate() {
        t.push_str(&r.to_string());
        for col in columns {
            t.push(',');
            t.push_str(&io::format_value(col[i]));
        }
        t.push('\n');
    }
    fs::write(path, t).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn mean_off_diagonal(fp: &Fingerprint) -> f64 {
    let n = fp.len() as f64;
    (fp.values().sum() - n) / (n * n - n)
}

fn cmd_fuse(ctx: &Ctx, a: FuseArgs) -> Result<()> {
    let objective = match a.objective {
        ObjectiveArg::Nmi => Objective::AvgNmi,
        ObjectiveArg::ExpNegVi => Objective::AvgExpNegVi,
        ObjectiveArg::Mi => Objective::AvgMi,
    };
    let cfg = FusionConfig {
        objective,
        latent_dim: a.latent_dim,
        learning_rate: a.lr,
        steps: a.steps,
        seed: ctx.seed,
        ..FusionConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ensemble = io::read_fingerprint_ensemble(existing(&a.ensemble)?, a.repair)?;
    if ensemble.is_empty() {
        return Err(usage(format!("no fingerprints under {}", a.ensemble.display())));
    }
    let (set, state) = fuse(&ensemble, &cfg)?;
    let out = ctx.out(a.out, "fused");
    io::write_posterior_set(&set, out.join("fused"))?;
    io::write_trace_csv(&state.objective_trace, out.join("trace.csv"))?;
    let off = mean_off_diagonal(&fingerprint_gaussian(&set));
    let trace = &state.objective_trace;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    let report = json!({
        "objective": serde_json::to_value(objective).unwrap_or(Value::Null),
        "members": ensemble.len(),
        "steps": a.steps,
        "learning_rate": a.lr,
        "latent_dim": a.latent_dim,
        "seed": ctx.seed,
        "initial_objective": num(first),
        "final_objective": num(last),
        "mean_offdiag_bc": num(off),
        "scattered": off < SCATTERED_BC,
    });
    io::write_json(&report, out.join("report.json"))?;
    if off < SCATTERED_BC {
        eprintln!("warning: fused posteriors barely overlap (mean off-diagonal BC {off:.4}); the representation is scattered");
    }
    let mut t = Table::new(&["members", "steps", "initial_objective", "final_objective", "mean_offdiag_bc", "out"]);
    t.row(vec![
        json!(ensemble.len()),
        json!(a.steps),
        num(first),
        num(last),
        num(off),
        text(out.display().to_string()),
    ]);
    t.print(ctx.format);
    Ok(())
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let out = ctx.out(a.out, "synth");
    let seed = ctx.seed;
    let mut t = Table::new(&["path", "space_id", "n", "d"]);
    let mut write = |set: &PosteriorSet, path: PathBuf| -> Result<()> {
        io::write_posterior_set(set, &path)?;
        t.row(vec![
            text(path.display().to_string()),
            text(set.space_id().to_string()),
            json!(set.len()),
            json!(set.dim()),
        ]);
        Ok(())
    };
    match a.kind {
        SynthKind::Nine => {
            let sets = gen_nine_space_suite(a.n.unwrap_or(200), seed)?;
            for (set, name) in sets.iter().zip(NINE_SPACE_NAMES) {
                write(set, out.join(name))?;
            }
        }
        SynthKind::So2 => {
            if a.members == 0 {
                return Err(usage("--members must be positive"));
            }
            let n = a.n.unwrap_or(200);
            let mut angles = None;
            for k in 0..a.members {
                let learner = gen_so2_weak(n, seed.wrapping_mul(1000).wrapping_add(k as u64), a.noise)?;
                let name = format!("m{k:02}");
                let set = learner.space.with_space_id(SpaceId::new(&name));
                write(&set, out.join("sets").join(&name))?;
                io::write_fingerprint(&fingerprint_gaussian(&set), out.join("fingerprints").join(&name), Dtype::F32Le)?;
                angles.get_or_insert((set.sample_ids().clone(), learner.angles));
            }
            let (ids, angles) = angles.expect("at least one member");
            io::write_scalar_column(&ids, "angle", &angles, out.join("angles.csv"))?;
        }
        SynthKind::Planted => {
            let p = PlantedParams {
                groups: a.groups,
                models: a.models,
                dims: a.dims,
                informative_per_model: a.informative,
                n_points: a.n.unwrap_or(PlantedParams::default().n_points),
                seed,
                ..PlantedParams::default()
            };
            let ens = gen_planted_channels(&p)?;
            let mut truth = String::from("ref,group\n");
            for (set, assignment) in ens.models.iter().zip(&ens.assignment) {
                write(set, out.join("models").join(&set.space_id().model))?;
                for (dim, g) in assignment.iter().enumerate() {
                    let r = ChannelRef {
                        model_id: set.space_id().model.clone(),
                        dim,
                    };
                    truth.push_str(&format!("{r},{}\n", g.map(|g| g.to_string()).unwrap_or_default()));
                }
            }
            let path = out.join("channel_groups.csv");
            fs::write(&path, truth).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        SynthKind::Separated => {
            let (set, labels) = gen_separated_gaussians(a.k, a.copies, a.d, seed)?;
            write(&set, out.join("set"))?;
            let labels = infocomp::HardClustering::from_labels(labels);
            io::write_hard_labels(set.sample_ids(), &labels, out.join("labels.csv"))?;
        }
    }
    t.print(ctx.format);
    Ok(())
}

fn cmd_continuity(ctx: &Ctx, a: ContinuityArgs) -> Result<()> {
    let set = io::read_posterior_set(existing(&a.input)?)?;
    let (_, angles) = io::read_scalar_column(existing(&a.order)?, Some(set.sample_ids()))?;
    let c = continuity_circle(&set, &angles)?;
    let mut t = Table::new(&["ratio", "infinite"]);
    t.row(vec![num(c.ratio), json!(c.infinite)]);
    t.print(ctx.format);
    Ok(())
}

fn cmd_info(ctx: &Ctx, a: InfoArgs) -> Result<()> {
    let m = io::read_manifest(existing(&a.input)?)?;
    let mut t = Table::new(&["kind", "space_id", "n", "d", "estimator", "bits", "std_err", "max_bits"]);
    let max_bits = (m.n as f64).log2();
    let (fp, set) = match m.kind.as_str() {
        io::KIND_FINGERPRINT => {
            if a.mc {
                return Err(usage("--mc needs a posterior set"));
            }
            (io::read_fingerprint(&a.input, a.repair)?, None)
        }
        io::KIND_POSTERIOR_SET => {
            let set = io::read_posterior_set(&a.input)?;
            (fingerprint_gaussian(&set), Some(set))
        }
        other => return Err(usage(format!("unknown artifact kind {other:?}"))),
    };
    let d = m.d.map_or(Value::Null, |d| json!(d));
    let mut row = |e: &infocomp::InfoEstimate| {
        t.row(vec![
            text(&m.kind),
            text(m.space_id.to_string()),
            json!(m.n),
            d.clone(),
            text(e.estimator.to_string()),
            num(e.bits),
            num(e.std_err),
            num(max_bits),
        ]);
    };
    let kt = info_kt(&fp);
    row(&kt);
    if let (true, Some(set)) = (a.mc, &set) {
        let cfg = McConfig::new(a.n_samples, a.agg_fraction, ctx.seed)?;
        row(&info_mc(set, &cfg)?);
    }
    t.print(ctx.format);
    if kt.bits >= max_bits - SATURATION_MARGIN_BITS {
        eprintln!(
            "warning: kt estimate {:.4} bits is within {SATURATION_MARGIN_BITS} bits of log2 N = {max_bits:.4}; \
             the bound saturates at the fingerprint size, so more information may be present",
            kt.bits
        );
    }
    Ok(())
}
