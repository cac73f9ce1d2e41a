use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use playtree::kmeans::KMeansConfig;
use playtree::metrics::{
    aligned_views, compressibility_report, pooled_scores, read_judgments, relevant_sets, team_draft_interleave, Side, Source,
};
use playtree::PlayId;

use crate::{create, load_plays, TreeArgs};

#[derive(Args)]
pub(crate) struct EvalArgs {
    /// WCE and PCA variance for identity, role and tree alignment.
    #[arg(long)]
    compressibility: bool,
    /// AP and ERR of ranked lists against judgments.
    #[arg(long)]
    metrics: bool,
    /// Team-draft interleave two methods' lists.
    #[arg(long)]
    interleave: bool,
    /// Play store for --compressibility.
    #[arg(long)]
    plays: Option<PathBuf>,
    /// Cluster counts for WCE.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20])]
    ks: Vec<usize>,
    /// Components reported for cumulative variance.
    #[arg(long, default_value_t = 10)]
    components: usize,
    #[command(flatten)]
    tree: TreeArgs,
    /// Judgments file: query_id,play_id,relevant.
    #[arg(long)]
    judgments: Option<PathBuf>,
    /// Ranked lists: query_id,method,rank,play_id[,distance].
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Cut-off for scoring.
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long, default_value = "tree")]
    method_a: String,
    #[arg(long, default_value = "baseline")]
    method_b: String,
    /// Directory for report files; stdout when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub(crate) fn run(a: EvalArgs) -> Result<()> {
    if !(a.compressibility || a.metrics || a.interleave) {
        bail!("pick at least one of --compressibility, --metrics, --interleave");
    }
    if a.compressibility {
        compressibility(&a)?;
    }
    if a.metrics {
        metrics(&a)?;
    }
    if a.interleave {
        interleave(&a)?;
    }
    Ok(())
}

fn emit(a: &EvalArgs, name: &str, text: &str) -> Result<()> {
    match &a.out_dir {
        Some(dir) => {
            let path = dir.join(name);
            create(&path)?.write_all(text.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn compressibility(a: &EvalArgs) -> Result<()> {
    let path = a.plays.as_ref().context("--compressibility needs --plays")?;
    let mut plays = load_plays(path)?;
    let window = plays.first().context("empty play store")?.window_seconds;
    plays.retain(|p| p.window_seconds == window);
    let views = aligned_views(&plays, &a.tree.config())?;
    let report = compressibility_report(&views, &a.ks, &KMeansConfig::with_seed(a.tree.seed))?;
    emit(a, "wce.csv", &report.wce_csv())?;
    emit(a, "variance.csv", &report.variance_csv())?;
    let mut summary = String::from("alignment,cumulative_variance\n");
    for name in ["identity", "role", "tree"] {
        let _ = writeln!(summary, "{name},{}", report.cumulative(name, a.components).unwrap_or(0.0));
    }
    emit(a, "summary.csv", &summary)?;
    for &k in &a.ks {
        let (i, r, t) = (
            report.wce_for("identity", k).unwrap_or(f64::NAN),
            report.wce_for("role", k).unwrap_or(f64::NAN),
            report.wce_for("tree", k).unwrap_or(f64::NAN),
        );
        eprintln!("K={k}: tree {t:.3} role {r:.3} identity {i:.3}{}", if t < r && r < i { "" } else { "  (order differs)" });
    }
    Ok(())
}

/// Ranked lists per query and method.
type Rankings = BTreeMap<String, BTreeMap<String, Vec<PlayId>>>;

fn read_rankings(path: &Path) -> Result<Rankings> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: BTreeMap<(String, String), Vec<(usize, PlayId)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("query_id") {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 4 {
            bail!("{}:{}: expected query_id,method,rank,play_id", path.display(), n + 1);
        }
        let rank: usize = f[2].parse().with_context(|| format!("{}:{}: bad rank", path.display(), n + 1))?;
        rows.entry((f[0].to_string(), f[1].to_string()))
            .or_default()
            .push((rank, PlayId(f[3].to_string())));
    }
    let mut out = Rankings::new();
    for ((q, m), mut list) in rows {
        list.sort_by_key(|(r, _)| *r);
        out.entry(q).or_default().insert(m, list.into_iter().map(|(_, id)| id).collect());
    }
    Ok(out)
}

fn inputs(a: &EvalArgs, need_judgments: bool) -> Result<(Rankings, BTreeMap<String, BTreeSet<PlayId>>)> {
    let rankings = read_rankings(a.rankings.as_ref().context("needs --rankings")?)?;
    let relevant = match &a.judgments {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            relevant_sets(&read_judgments(file).with_context(|| format!("reading {}", path.display()))?)
        }
        None if need_judgments => bail!("--metrics needs --judgments"),
        None => BTreeMap::new(),
    };
    Ok((rankings, relevant))
}

fn metrics(a: &EvalArgs) -> Result<()> {
    let (rankings, relevant) = inputs(a, true)?;
    let mut out = String::from("query_id,method,ap,err\n");
    let mut totals: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let empty = BTreeSet::new();
    for (query, methods) in &rankings {
        let rel = relevant.get(query).unwrap_or(&empty);
        for (method, list) in methods {
            let (s, _) = pooled_scores(list, &[], rel, a.depth);
            let _ = writeln!(out, "{query},{method},{},{}", s.average_precision, s.reciprocal_rank);
            let t = totals.entry(method).or_default();
            t.0 += s.average_precision;
            t.1 += s.reciprocal_rank;
            t.2 += 1;
        }
    }
    for (method, (ap, err, n)) in &totals {
        let _ = writeln!(out, "mean,{method},{},{}", ap / *n as f64, err / *n as f64);
    }
    emit(a, "metrics.csv", &out)
}

fn interleave(a: &EvalArgs) -> Result<()> {
    let (rankings, relevant) = inputs(a, false)?;
    let mut out = String::from("query_id,position,play_id,source,drafted_by\n");
    let mut credit = String::from("query_id,credit_a,credit_b\n");
    for (i, (query, methods)) in rankings.iter().enumerate() {
        let (Some(la), Some(lb)) = (methods.get(&a.method_a), methods.get(&a.method_b)) else {
            eprintln!("{query}: missing {} or {} list, skipped", a.method_a, a.method_b);
            continue;
        };
        let top = |l: &[PlayId]| l[..l.len().min(a.depth)].to_vec();
        let merged = team_draft_interleave(&top(la), &top(lb), a.tree.seed.wrapping_add(i as u64));
        for (pos, item) in merged.items.iter().enumerate() {
            let source = match item.source {
                Source::A => a.method_a.as_str(),
                Source::B => a.method_b.as_str(),
                Source::Both => "both",
            };
            let by = match item.drafted_by {
                Side::A => a.method_a.as_str(),
                Side::B => a.method_b.as_str(),
            };
            let _ = writeln!(out, "{query},{},{},{source},{by}", pos + 1, item.play_id);
        }
        if let Some(rel) = relevant.get(query) {
            let (ca, cb) = merged.credit(rel);
            let _ = writeln!(credit, "{query},{ca},{cb}");
        }
    }
    emit(a, "interleaved.csv", &out)?;
    if !relevant.is_empty() {
        emit(a, "credit.csv", &credit)?;
    }
    Ok(())
}
