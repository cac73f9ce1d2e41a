//! End-to-end acceptance checks. Prints one `[PASS]` or `[FAIL]` line per
//! criterion and exits non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use playtree::ingest::{generate_synthetic, near_duplicates, DuplicateSpec, SyntheticSpec};
use playtree::kmeans::KMeansConfig;
use playtree::metrics::{
    aligned_views, average_precision, compressibility_report, expected_reciprocal_rank, team_draft_interleave, Side,
};
use playtree::model::{AgentSelection, CostMatrix, Play, Team};
use playtree::retrieval::{build_index, IndexConfig, PlayIndex, Query};
use playtree::template::fit_template;
use playtree::tree::grow_tree_with_placements;
use playtree::{solve_assignment, Method, PermutationMap, PlayId, TeamPerms, TemplateLearnConfig, TreeConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn corpus(g: usize, n: usize, noise: f64, seed: u64) -> Vec<Play<f64>> {
    generate_synthetic::<f64>(&SyntheticSpec::new(g, n, noise, seed)).unwrap().plays
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..n {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn assignment_oracle() -> Outcome {
    let perms = permutations(5);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let matrices: Vec<CostMatrix<f64>> = (0..1000)
        .map(|_| CostMatrix::new(5, (0..25).map(|_| rng.gen_range(0.0..100.0)).collect()).unwrap())
        .collect();
    let started = Instant::now();
    let solved: Vec<_> = matrices.iter().map(solve_assignment).collect();
    let elapsed = started.elapsed();
    let row_sum = |c: &CostMatrix<f64>, p: &[usize]| (0..5).map(|i| c.get(i, p[i])).sum::<f64>();
    let mut mismatches = 0;
    for (c, (perm, cost)) in matrices.iter().zip(&solved) {
        let best = perms.iter().map(|p| row_sum(c, p)).fold(f64::INFINITY, f64::min);
        if row_sum(c, perm.mapping()) != best || *cost != best {
            mismatches += 1;
        }
    }
    check(
        perms.len() == 120 && mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("1000 matrices, {mismatches} differ from the 120-permutation minimum, solved in {elapsed:.1?}"),
    )
}

fn em_monotonicity() -> Outcome {
    let plays = corpus(4, 125, 1.0, 11);
    let mut worst = Vec::new();
    let mut iterations = Vec::new();
    for team in Team::BOTH {
        let cfg = TemplateLearnConfig {
            max_iterations: 50,
            convergence_threshold: 1e-12,
            ..TemplateLearnConfig::with_seed(5)
        };
        let fit = fit_template(&plays, team, &cfg).map_err(|e| e.to_string())?;
        iterations.push(fit.objective.len());
        worst.extend(fit.objective.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] - w[0]));
    }
    check(
        worst.is_empty(),
        format!("500 plays, objective traces of {iterations:?} passes, {} increases", worst.len()),
    )
}

fn tree_refinement() -> Outcome {
    let plays = corpus(8, 250, 1.0, 5);
    let cfg = TreeConfig {
        max_leaf_size: 100,
        ..TreeConfig::with_seed(5)
    };
    let (tree, _) = grow_tree_with_placements(&plays, &cfg).map_err(|e| e.to_string())?;
    let c = &tree.layer_costs;
    let strict = c.len() >= 3 && c.windows(2).take(2).all(|w| w[1] < w[0]);
    let short: Vec<String> = c.iter().map(|v| format!("{v:.4e}")).collect();
    check(strict, format!("G=8, 2000 plays, layer costs [{}]", short.join(", ")))
}

fn formation_recovery() -> Outcome {
    let data = generate_synthetic::<f64>(&SyntheticSpec::new(4, 500, 1.0, 7)).unwrap();
    let cfg = TreeConfig {
        max_leaf_size: 600,
        ..TreeConfig::with_seed(7)
    };
    let (tree, placements) = grow_tree_with_placements(&data.plays, &cfg).map_err(|e| e.to_string())?;
    let mut leaves: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (p, label) in placements.iter().zip(&data.labels) {
        *leaves.entry(p.leaf).or_default().entry(label.formation).or_default() += 1;
    }
    let majority: usize = leaves.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    let purity = majority as f64 / data.plays.len() as f64;
    let root_k = tree.root().children.len();
    check(
        purity >= 0.9 && root_k == 4,
        format!("purity {:.4} over {} leaves, root K = {root_k}", purity, leaves.len()),
    )
}

fn compressibility() -> Outcome {
    let plays = corpus(6, 300, 1.0, 3);
    let cfg = TreeConfig {
        max_leaf_size: 200,
        ..TreeConfig::with_seed(3)
    };
    let views = aligned_views(&plays, &cfg).map_err(|e| e.to_string())?;
    let report = compressibility_report(&views, &[5, 10, 20], &KMeansConfig::with_seed(1)).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [5, 10, 20] {
        let (i, r, t) = (
            report.wce_for("identity", k).unwrap(),
            report.wce_for("role", k).unwrap(),
            report.wce_for("tree", k).unwrap(),
        );
        ok &= t < r && r < i;
        parts.push(format!("K={k} tree {t:.2} < role {r:.2} < identity {i:.2}"));
    }
    let (i, r, t) = (
        report.cumulative("identity", 10).unwrap(),
        report.cumulative("role", 10).unwrap(),
        report.cumulative("tree", 10).unwrap(),
    );
    ok &= t > r && r > i;
    parts.push(format!("variance@10 tree {t:.5} > role {r:.5} > identity {i:.5}"));
    check(ok, parts.join("; "))
}

fn scramble(rng: &mut ChaCha8Rng) -> TeamPerms {
    let mut draw = || {
        let mut v: Vec<usize> = (0..5).collect();
        v.shuffle(rng);
        PermutationMap::new(v).unwrap()
    };
    TeamPerms {
        offense: draw(),
        defense: draw(),
    }
}

fn retrieval_fidelity() -> Outcome {
    let plays = corpus(8, 250, 1.0, 13);
    let mut cfg = IndexConfig::with_seed(13);
    cfg.tree.max_leaf_size = 100;
    let index = build_index(plays.clone(), &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let picks: Vec<&Play<f64>> = plays.choose_multiple(&mut rng, 100).collect();
    let mut plain = 0;
    let mut scrambled = 0;
    for play in picks {
        let hit = |q: Play<f64>| -> Result<bool, String> {
            let r = index.query(&Query::new(q, AgentSelection::all(5), 5)).map_err(|e| e.to_string())?;
            Ok(r[0].play_id == play.play_id && r[0].distance == 0.0)
        };
        plain += usize::from(hit(play.clone())?);
        let perms = scramble(&mut rng);
        scrambled += usize::from(hit(play.permuted_both(&perms).map_err(|e| e.to_string())?)?);
    }

    let big = generate_synthetic::<f32>(&SyntheticSpec::new(50, 2000, 1.0, 99)).unwrap().plays;
    let mut cfg = IndexConfig::with_seed(99);
    cfg.tree.partition_sample_limit = Some(2000);
    let started = Instant::now();
    let index = build_index(big.clone(), &cfg).map_err(|e| e.to_string())?;
    let build = started.elapsed();
    let mut times = Vec::new();
    for i in 0..50 {
        let q = big[(i * 1999) % big.len()].permuted_both(&scramble(&mut rng)).unwrap();
        let query = Query::new(q, AgentSelection::new([0, 1], true), 10);
        let t = Instant::now();
        index.query(&query).map_err(|e| e.to_string())?;
        times.push(t.elapsed());
    }
    times.sort();
    let median = times[times.len() / 2];
    check(
        plain == 100 && scrambled == 100 && median < Duration::from_secs(1),
        format!(
            "self {plain}/100, scrambled {scrambled}/100; {} plays indexed in {build:.1?}, median query {median:.2?}",
            index.store().len()
        ),
    )
}

fn subset_advantage() -> Outcome {
    let base = corpus(12, 150, 1.0, 21);
    let mut plays = base.clone();
    let sources: Vec<&Play<f64>> = base.iter().step_by(base.len() / 20).take(20).collect();
    let mut relevant = BTreeMap::new();
    for (i, src) in sources.iter().enumerate() {
        let spec = DuplicateSpec {
            count: 5,
            jitter_ft: 2.0,
            noise_ft: 0.5,
            seed: 1000 + i as u64,
        };
        let mut set: BTreeSet<PlayId> = BTreeSet::from([src.play_id.clone()]);
        for (dup, _) in near_duplicates(*src, &spec).map_err(|e| e.to_string())? {
            set.insert(dup.play_id.clone());
            plays.push(dup);
        }
        relevant.insert(src.play_id.clone(), set);
    }
    let mut cfg = IndexConfig::with_seed(21);
    cfg.tree.max_leaf_size = 100;
    let index: PlayIndex<f64> = build_index(plays, &cfg).map_err(|e| e.to_string())?;
    let mut means = [0.0; 2];
    for src in &sources {
        for (slot, method) in [Method::Tree, Method::Baseline].into_iter().enumerate() {
            let mut q = Query::new((*src).clone(), AgentSelection::new([0, 1], true), 10);
            q.method = method;
            let ids: Vec<PlayId> = index.query(&q).map_err(|e| e.to_string())?.into_iter().map(|r| r.play_id).collect();
            means[slot] += average_precision(&ids, &relevant[&src.play_id]) / sources.len() as f64;
        }
    }
    check(
        means[0] > means[1],
        format!("20 queries on two offense players + ball: mean AP tree {:.4}, baseline {:.4}", means[0], means[1]),
    )
}

fn metric_units() -> Outcome {
    let ids = |v: &[&str]| v.iter().map(|s| PlayId(s.to_string())).collect::<Vec<_>>();
    let ranking = ids(&["a", "b", "c"]);
    let rel: BTreeSet<PlayId> = ids(&["a", "c"]).into_iter().collect();
    let ap = average_precision(&ranking, &rel);
    let err = expected_reciprocal_rank(&ids(&["w", "x", "y", "z"]), &ids(&["z"]).into_iter().collect());

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    for pair in 0..1000 {
        let pool: Vec<PlayId> = (0..rng.gen_range(1..30)).map(|i| PlayId(format!("p{i}"))).collect();
        let mut a = pool.clone();
        a.shuffle(&mut rng);
        a.truncate(rng.gen_range(0..=pool.len()));
        let mut b = pool.clone();
        b.shuffle(&mut rng);
        b.truncate(rng.gen_range(0..=pool.len()));
        let merged = team_draft_interleave(&a, &b, pair);
        let (mut na, mut nb) = (0i64, 0i64);
        for item in &merged.items {
            match item.drafted_by {
                Side::A => na += 1,
                Side::B => nb += 1,
            }
            if (na - nb).abs() > 1 {
                violations += 1;
                break;
            }
        }
    }
    check(
        (ap - 0.8333).abs() <= 1e-4 && (ap - 5.0 / 6.0).abs() <= 1e-9 && err == 0.25 && violations == 0,
        format!("AP {ap:.10}, ERR {err}, prefix imbalance in {violations}/1000 interleavings"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_playtree"))
            .current_dir(d)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    run(&["generate", "--formations", "20", "--plays-per-formation", "500", "--window-seconds", "4", "--seed", "8", "--out", "plays.csv"])?;
    let build = ["build", "--plays", "plays.csv", "--seed", "8", "--max-leaf-size", "2000", "--out"];
    run(&[&build[..], &["a"]].concat())?;
    run(&[&build[..], &["b"]].concat())?;
    let same = files_equal(&d.join("a"), &d.join("b"))?;
    let index = PlayIndex::<f32>::load_dir(&d.join("a")).map_err(|e| e.to_string())?;
    let stats = &index.stats().windows[0];
    check(
        same && stats.max_leaf_size <= 2000,
        format!(
            "{} plays of {} s: index files identical = {same}, {} leaves, largest {}",
            stats.plays, stats.window_seconds, stats.leaf_count, stats.max_leaf_size
        ),
    )
}

fn files_equal(a: &Path, b: &Path) -> Result<bool, String> {
    let list = |d: &Path| -> Result<Vec<_>, String> {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .collect();
        v.sort();
        Ok(v)
    };
    let names = list(a)?;
    if names != list(b)? || names.is_empty() {
        return Ok(false);
    }
    for n in names {
        if std::fs::read(a.join(&n)).map_err(|e| e.to_string())? != std::fs::read(b.join(&n)).map_err(|e| e.to_string())? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("assignment oracle", assignment_oracle),
        ("template EM monotonicity", em_monotonicity),
        ("tree refinement", tree_refinement),
        ("formation recovery", formation_recovery),
        ("compressibility ordering", compressibility),
        ("retrieval fidelity and latency", retrieval_fidelity),
        ("subset advantage", subset_advantage),
        ("metric units", metric_units),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("{} of {} criteria passed", 9 - failed, 9);
    if failed > 0 {
        std::process::exit(1);
    }
}
