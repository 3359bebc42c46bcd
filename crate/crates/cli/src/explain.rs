use std::fs::File;
use std::path::Path;

use serde::Serialize;
use survexplain::dataio::{load_csv, DatasetSchema};
use survexplain::effects::{
    ale_curves, ale_t, build_grid, ice_curves, m_plot, marginalize_time, pdp_curves, sample_rows,
    EffectSurface, GridKind, TimeAggregate, TimeWeights,
};
use survexplain::importance::{cpi, loco, pfi, BrierLoss, FiConfig, FiMode};
use survexplain::interactions::{h_total, h_two_way};
use survexplain::local::{
    counterfactual_explain, survlime_explain, PsoConfig, SurvLimeBaseline, SurvLimeConfig,
};
use survexplain::models::{
    CoxConfig, ModelDocument, ModelOutput, ModelSpec, OutputScale, SurvivalModel,
};
use survexplain::rng::derive_seed;
use survexplain::survshap::{
    aggregate_global, survshap_kernel, survshap_sampling, SampleCount, SurvShapResult,
};
use survexplain::{FeatureTable, SurvivalDataset, TimeGrid};

use crate::args::{
    Aggregate, Estimator, ExplainArgs, GridKindArg, LimeBaseline, Method, ModeArg, Scale, Weights,
};
use crate::output::{load_dataset, load_model_document, write_artifact};
use crate::{usage, CliResult};

struct Ctx<'a> {
    args: &'a ExplainArgs,
    data: SurvivalDataset,
    model: Box<dyn SurvivalModel>,
    spec: ModelSpec,
    times: TimeGrid,
    threads: usize,
}

impl Ctx<'_> {
    fn seed(&self) -> CliResult<u64> {
        self.args
            .seed
            .ok_or_else(|| usage(format!("explain {} needs --seed", self.args.method.name())))
    }

    fn features(&self) -> &FeatureTable {
        self.data.features()
    }

    fn feature(&self, name: Option<&String>) -> CliResult<usize> {
        let name = name.ok_or_else(|| usage("--feature is required"))?;
        self.features()
            .feature_index(name)
            .map_err(|e| usage(e.to_string()))
    }

    fn instance(&self) -> CliResult<(usize, &[f64])> {
        let i = self
            .args
            .instance
            .ok_or_else(|| usage("--instance is required"))?;
        if i >= self.data.n_rows() {
            return Err(usage(format!(
                "--instance {i} is out of range ({} rows)",
                self.data.n_rows()
            )));
        }
        Ok((i, self.features().row(i)))
    }

    fn path(&self, stem: &str, ext: &str) -> std::path::PathBuf {
        self.args.out.join(format!("{stem}.{ext}"))
    }

    fn artifact<R: Serialize>(&self, stem: &str, seed: Option<u64>, result: &R) -> CliResult<()> {
        write_artifact(
            &self.path(stem, "json"),
            &format!("explain {}", self.args.method.name()),
            self.args,
            seed,
            self.threads,
            result,
        )
    }

    fn csv(&self, stem: &str) -> CliResult<File> {
        Ok(File::create(self.path(stem, "csv"))?)
    }
}

pub fn run(args: &ExplainArgs, threads: usize) -> CliResult<()> {
    let (data, _) = load_dataset(&args.data)?;
    let doc = load_model_document(&args.model)?;
    let spec = match &doc {
        ModelDocument::Cox { .. } => ModelSpec::Cox(CoxConfig::default()),
        ModelDocument::Rsf { config, .. } => ModelSpec::Rsf(config.clone()),
    };
    let model = doc.into_model()?;
    if model.schema() != data.schema() {
        return Err(usage("model and data schemas differ"));
    }
    let times = args.times.resolve(&data)?;
    std::fs::create_dir_all(&args.out)?;
    let ctx = Ctx {
        args,
        data,
        model,
        spec,
        times,
        threads,
    };
    match args.method {
        Method::Ice | Method::Pdp | Method::Mplot | Method::Ale => effects(&ctx),
        Method::Hstat => hstat(&ctx),
        Method::Pfi | Method::Cpi | Method::Loco => importance(&ctx),
        Method::Survlime => survlime(&ctx),
        Method::Survshap => survshap(&ctx),
        Method::Counterfactual => counterfactual(&ctx),
    }
}

fn output_scale(scale: Scale) -> OutputScale {
    match scale {
        Scale::Survival => OutputScale::Survival,
        Scale::Chf => OutputScale::Chf,
        Scale::LogChf => OutputScale::LogChf,
    }
}

fn time_aggregate(a: Aggregate) -> TimeAggregate {
    match a {
        Aggregate::Mean => TimeAggregate::Mean,
        Aggregate::Sum => TimeAggregate::Sum,
    }
}

/// Event times of the data that fall on the grid, with multiplicity.
fn time_weights(ctx: &Ctx) -> TimeWeights {
    match ctx.args.time_weights {
        Weights::Unique => TimeWeights::UniqueTimes,
        Weights::Observed => {
            let pts = ctx.times.points();
            TimeWeights::ObservedTimes(
                ctx.data
                    .time()
                    .iter()
                    .zip(ctx.data.event())
                    .filter(|(t, e)| **e && pts.binary_search_by(|p| p.total_cmp(t)).is_ok())
                    .map(|(t, _)| *t)
                    .collect(),
            )
        }
    }
}

fn effects(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let j = ctx.feature(a.feature.as_ref())?;
    let pred = ModelOutput::new(ctx.model.as_ref(), output_scale(a.scale));
    let feats = ctx.features();
    let name = &feats.schema()[j].name;
    let needs_seed = a.method == Method::Ice || a.grid_kind == GridKindArg::Sample;
    let seed = if needs_seed {
        Some(ctx.seed()?)
    } else {
        a.seed
    };
    let kind = match a.grid_kind {
        GridKindArg::Equidistant => GridKind::Equidistant,
        GridKindArg::Quantile => GridKind::Quantile,
        GridKindArg::Sample => GridKind::Sample,
    };
    let grid = || build_grid(feats, j, kind, a.grid_size, seed.unwrap_or(0));
    let marginalize = |s: EffectSurface| -> CliResult<EffectSurface> {
        match a.marginalize {
            None => Ok(s),
            Some(m) => Ok(marginalize_time(&s, time_aggregate(m), &time_weights(ctx))?),
        }
    };
    let surface = match a.method {
        Method::Ice => {
            let rows = sample_rows(feats.n_rows(), a.ice_rows, seed.unwrap_or(0));
            marginalize(ice_curves(
                &pred,
                feats,
                &grid()?,
                &ctx.times,
                a.center_at,
                Some(&rows),
            )?)?
        }
        Method::Pdp => marginalize(pdp_curves(
            &pred,
            feats,
            &grid()?,
            &ctx.times,
            a.center_at,
            None,
        )?)?,
        Method::Mplot => marginalize(m_plot(&pred, feats, &grid()?, &ctx.times, a.fraction)?)?,
        _ => match a.marginalize {
            None => ale_curves(&pred, feats, j, &ctx.times, a.intervals, !a.uncentered)?,
            Some(m) => ale_t(
                &pred,
                feats,
                j,
                &ctx.times,
                a.intervals,
                !a.uncentered,
                time_aggregate(m),
                &time_weights(ctx),
            )?,
        },
    };
    let stem = format!("{}_{name}", a.method.name());
    surface.write_csv(ctx.csv(&stem)?)?;
    ctx.artifact(&stem, seed, &surface)
}

fn hstat(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let seed = ctx.seed()?;
    let pred = ModelOutput::new(ctx.model.as_ref(), output_scale(a.scale));
    let feats = ctx.features();
    let j = ctx.feature(a.feature.as_ref())?;
    let rows = sample_rows(feats.n_rows(), a.eval_rows, seed);
    let (result, stem) = match &a.with {
        Some(other) => {
            let k = ctx.feature(Some(other))?;
            (
                h_two_way(&pred, feats, j, k, &ctx.times, &rows)?,
                format!(
                    "hstat_{}_{}",
                    feats.schema()[j].name,
                    feats.schema()[k].name
                ),
            )
        }
        None => (
            h_total(&pred, feats, j, &ctx.times, &rows)?,
            format!("hstat_{}", feats.schema()[j].name),
        ),
    };
    result.write_csv(ctx.csv(&stem)?)?;
    ctx.artifact(&stem, Some(seed), &result)
}

fn importance(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let mode = match a.mode {
        ModeArg::Difference => FiMode::Difference,
        ModeArg::Quotient => FiMode::Quotient,
    };
    let pred = ModelOutput::survival(ctx.model.as_ref());
    let (result, seed) = match a.method {
        Method::Loco => {
            let test = match &a.test_data {
                Some(path) => {
                    load_csv(
                        path,
                        &DatasetSchema::from_file(&a.data.schema)?,
                        a.data.impute,
                    )?
                    .0
                }
                None => ctx.data.clone(),
            };
            let r = loco(&ctx.spec, &ctx.data, &test, &BrierLoss, mode, &ctx.times)?;
            (r, a.seed)
        }
        _ => {
            let seed = ctx.seed()?;
            let cfg = FiConfig {
                repeats: a.repeats,
                mode,
                seed,
            };
            let r = if a.method == Method::Pfi {
                pfi(&pred, &ctx.data, &BrierLoss, &cfg, &ctx.times)?
            } else {
                cpi(&pred, &ctx.data, &BrierLoss, &cfg, &ctx.times)?
            };
            (r, Some(seed))
        }
    };
    let stem = a.method.name();
    result.write_csv(ctx.csv(stem)?)?;
    ctx.artifact(stem, seed, &result)
}

fn survlime(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let seed = ctx.seed()?;
    let (i, x) = ctx.instance()?;
    let cfg = SurvLimeConfig {
        g: a.g,
        radius: a.radius,
        baseline: match a.lime_baseline {
            LimeBaseline::Breslow => SurvLimeBaseline::Breslow,
            LimeBaseline::NelsonAalen => SurvLimeBaseline::NelsonAalen,
        },
        seed,
        ..SurvLimeConfig::default()
    };
    let pred = ModelOutput::new(ctx.model.as_ref(), OutputScale::Chf);
    let r = survlime_explain(&pred, &ctx.data, x, &cfg)?;
    let stem = format!("survlime_{i}");
    let mut w = csv::Writer::from_writer(ctx.csv(&stem)?);
    w.write_record([
        "feature",
        "coefficient",
        "coefficient_raw",
        "local_importance",
    ])
    .map_err(survexplain::Error::from)?;
    for k in 0..r.names.len() {
        w.write_record([
            r.names[k].clone(),
            r.coefficients[k].to_string(),
            r.coefficients_raw[k].to_string(),
            r.local_importance[k].to_string(),
        ])
        .map_err(survexplain::Error::from)?;
    }
    w.flush()?;
    ctx.artifact(&stem, Some(seed), &r)
}

fn shap_one(
    ctx: &Ctx,
    background: &FeatureTable,
    x: &[f64],
    samples: SampleCount,
    seed: u64,
) -> CliResult<SurvShapResult> {
    let pred = ModelOutput::survival(ctx.model.as_ref());
    Ok(match ctx.args.estimator {
        Estimator::Sampling => survshap_sampling(&pred, background, x, &ctx.times, samples, seed)?,
        Estimator::Kernel => survshap_kernel(&pred, background, x, &ctx.times, samples, seed)?,
    })
}

fn write_phi_csv(path: &Path, r: &SurvShapResult) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(survexplain::Error::from)?;
    w.write_record(["feature", "t", "phi"])
        .map_err(survexplain::Error::from)?;
    for (j, name) in r.features.iter().enumerate() {
        for (s, t) in r.times.points().iter().enumerate() {
            w.write_record([name.clone(), t.to_string(), r.phi[j][s].to_string()])
                .map_err(survexplain::Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn survshap(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let seed = ctx.seed()?;
    let n = ctx.data.n_rows();
    let p = ctx.data.n_features();
    let samples = match a.samples.as_deref().map(str::trim) {
        None => SampleCount::default_for(p),
        Some("all") => SampleCount::All,
        Some(s) => SampleCount::Count(
            s.parse()
                .map_err(|_| usage(format!("--samples must be `all` or a count, got `{s}`")))?,
        ),
    };
    let background = ctx
        .features()
        .select_rows(&sample_rows(n, a.background, seed));
    if a.instance.is_some() {
        let (i, x) = ctx.instance()?;
        let mut r = shap_one(ctx, &background, x, samples, seed)?;
        r.instance = Some(i);
        let stem = format!("survshap_{i}");
        write_phi_csv(&ctx.path(&stem, "csv"), &r)?;
        return ctx.artifact(&stem, Some(seed), &r);
    }
    let rows = sample_rows(n, a.shap_rows, derive_seed(seed, &[1]));
    let results = rows
        .iter()
        .map(|&i| {
            let mut r = shap_one(
                ctx,
                &background,
                ctx.features().row(i),
                samples,
                derive_seed(seed, &[2, i as u64]),
            )?;
            r.instance = Some(i);
            Ok(r)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let global = aggregate_global(&results)?;
    global.write_curves_csv(ctx.csv("survshap_curves")?)?;
    global.write_beeswarm_csv(ctx.csv("survshap_beeswarm")?)?;
    #[derive(Serialize)]
    struct Global<'a> {
        global: &'a survexplain::survshap::SurvShapGlobal,
        instances: &'a [SurvShapResult],
    }
    ctx.artifact(
        "survshap_global",
        Some(seed),
        &Global {
            global: &global,
            instances: &results,
        },
    )
}

fn counterfactual(ctx: &Ctx) -> CliResult<()> {
    let a = ctx.args;
    let seed = ctx.seed()?;
    let (i, x) = ctx.instance()?;
    let r_gap = a.r_gap.ok_or_else(|| usage("--r-gap is required"))?;
    let pso = PsoConfig {
        particles: a.particles,
        iterations: a.iterations,
        ..PsoConfig::default()
    };
    let pred = ModelOutput::survival(ctx.model.as_ref());
    let r = counterfactual_explain(&pred, &ctx.data, x, r_gap, a.penalty, &pso, seed)?;
    ctx.artifact(&format!("counterfactual_{i}"), Some(seed), &r)
}
