use polykit_core::hypercolumn::{
    aggregate, count_added_elements, FeatureMap, HypercolumnSpec, Interpolation, Scheme,
};
use polykit_core::loss::{gradient_suite, GradCheck};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, CliError, CliResult};
use crate::io::emit;
use crate::{BenchArgs, LossCheckArgs};

pub const BENCH_CSV_HEADER: &str =
    "levels,delta,height,width,interpolation,cases,max_abs_diff,direct_additions,stairstep_additions";

pub fn upsample_bench(a: &BenchArgs) -> CliResult<()> {
    if a.delta == 0 || a.cases == 0 {
        return usage("--delta and --cases must be positive");
    }
    let (h, w) = (a.size.0 as usize, a.size.1 as usize);
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for &n in &a.levels {
        if n == 0 || h % (1 << (n - 1)) != 0 || w % (1 << (n - 1)) != 0 {
            return usage(format!("{h}x{w} does not halve exactly {} times", n.saturating_sub(1)));
        }
        for (name, mode) in [("nearest", Interpolation::Nearest), ("bilinear", Interpolation::Bilinear)] {
            let spec = HypercolumnSpec {
                levels: n,
                delta: a.delta,
                interpolation: mode,
                base_height: h,
                base_width: w,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(n as u64);
            let mut max_diff: f64 = 0.0;
            for _ in 0..a.cases {
                let levels = (0..n)
                    .map(|i| {
                        let (lh, lw) = spec.level_size(i);
                        let data = (0..lh * lw * a.delta).map(|_| rng.random_range(-1.0..1.0)).collect();
                        FeatureMap::from_vec(lh, lw, a.delta, data)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let d = aggregate(&levels, &spec, Scheme::Direct)?;
                let s = aggregate(&levels, &spec, Scheme::Stairstep)?;
                max_diff = max_diff.max(d.output.max_abs_diff(&s.output)?);
            }
            out += &format!(
                "{n},{},{h},{w},{name},{},{max_diff:e},{},{}\n",
                a.delta,
                a.cases,
                count_added_elements(&spec, Scheme::Direct)?,
                count_added_elements(&spec, Scheme::Stairstep)?
            );
        }
    }
    emit(None, &out)
}

pub fn loss_check(a: &LossCheckArgs) -> CliResult<()> {
    if a.instances == 0 {
        return usage("--instances must be positive");
    }
    let c = gradient_suite(a.instances, a.seed)?;
    let line = format!(
        "instances={} entries={} max rel err {:.3e} {} {:e}, max abs err on near-zero entries {:.3e} (limit {:e})",
        a.instances,
        c.entries,
        c.max_rel_err,
        if c.max_rel_err < GradCheck::REL_TOL { "<" } else { ">=" },
        GradCheck::REL_TOL,
        c.max_abs_err_small,
        GradCheck::ABS_TOL
    );
    emit(None, &(line.clone() + "\n"))?;
    if c.passed() {
        Ok(())
    } else {
        Err(CliError::Internal(format!("gradient check failed: {line}")))
    }
}
