//! CSV tables (and optional SVG step plots) for population analyses.
//!
//! | file             | columns                                                      |
//! |------------------|--------------------------------------------------------------|
//! | `edf.csv`        | `error`, then one EDF column per population                  |
//! | `summary.csv`    | `space,n,min_error,mean_error`                               |
//! | `bootstrap.csv`  | `space,parameter,flops_lo,flops_hi,n,ci_low,median,ci_high`  |
//! | `trends.csv`     | `space,quantity,model,frontier,a,b,c,rmse,n`                 |
//! | `efficiency.csv` | `space,budget,expected_best,std_err`                         |
//! | `compare.csv`    | `better,worse,range_lo,range_hi,holds,min_gap,at`            |

use std::io::Write;

use crate::popstats::{BinTrend, Dominance, Edf, SearchPoint, TrendFit};
use crate::Result;

/// Overlaid EDFs evaluated at every distinct error of every population, plus
/// a final row just above the overall maximum.
pub fn write_edf_csv<W: Write>(w: W, edfs: &[(&str, &Edf)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["error".to_string()];
    header.extend(edfs.iter().map(|(n, _)| n.to_string()));
    out.write_record(&header)?;

    let mut xs: Vec<f64> = edfs.iter().flat_map(|(_, f)| f.sorted().iter().copied()).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if let Some(&max) = xs.last() {
        xs.push(max.next_up());
    }
    for x in xs {
        let mut row = vec![x.to_string()];
        row.extend(edfs.iter().map(|(_, f)| f.eval(x).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: W, edfs: &[(&str, &Edf)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["space", "n", "min_error", "mean_error"])?;
    for (name, f) in edfs {
        let s = f.summary();
        out.write_record([name.to_string(), s.n.to_string(), s.min.to_string(), s.mean.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub struct BootstrapRow<'a> {
    pub space: &'a str,
    pub parameter: &'a str,
    pub bin: BinTrend,
}

pub fn write_bootstrap_csv<W: Write>(w: W, rows: &[BootstrapRow<'_>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["space", "parameter", "flops_lo", "flops_hi", "n", "ci_low", "median", "ci_high"])?;
    for r in rows {
        let b = &r.bin;
        out.write_record([
            r.space.to_string(),
            r.parameter.to_string(),
            b.flops_lo.to_string(),
            b.flops_hi.to_string(),
            b.n.to_string(),
            b.result.ci_low.to_string(),
            b.result.median.to_string(),
            b.result.ci_high.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub struct TrendRow<'a> {
    pub space: &'a str,
    pub quantity: &'a str,
    pub frontier: bool,
    pub fit: TrendFit,
}

pub fn write_trends_csv<W: Write>(w: W, rows: &[TrendRow<'_>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["space", "quantity", "model", "frontier", "a", "b", "c", "rmse", "n"])?;
    for r in rows {
        let f = &r.fit;
        let model = serde_json::to_value(f.model)?;
        out.write_record([
            r.space.to_string(),
            r.quantity.to_string(),
            model.as_str().unwrap_or_default().to_string(),
            r.frontier.to_string(),
            f.a.to_string(),
            f.b.to_string(),
            f.c.to_string(),
            f.rmse.to_string(),
            f.n.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_efficiency_csv<W: Write>(w: W, rows: &[(&str, Vec<SearchPoint>)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["space", "budget", "expected_best", "std_err"])?;
    for (space, pts) in rows {
        for p in pts {
            out.write_record([
                space.to_string(),
                p.budget.to_string(),
                p.expected_best.to_string(),
                p.std_err.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub struct CompareRow<'a> {
    pub better: &'a str,
    pub worse: &'a str,
    pub range: (f64, f64),
    pub dominance: Dominance,
}

pub fn write_compare_csv<W: Write>(w: W, rows: &[CompareRow<'_>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["better", "worse", "range_lo", "range_hi", "holds", "min_gap", "at"])?;
    for r in rows {
        out.write_record([
            r.better.to_string(),
            r.worse.to_string(),
            r.range.0.to_string(),
            r.range.1.to_string(),
            r.dominance.holds.to_string(),
            r.dominance.min_gap.to_string(),
            r.dominance.at.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Step plot of one or more EDFs.
pub fn edf_svg(edfs: &[(&str, &Edf)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let lo = edfs.iter().map(|(_, f)| f.min()).fold(f64::INFINITY, f64::min);
    let hi = edfs.iter().map(|(_, f)| f.max()).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |e: f64| pad + (e - lo) / span * (w - 2.0 * pad);
    let y = |p: f64| h - pad - p * (h - 2.0 * pad);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    s += &format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (i, (name, f)) in edfs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = vec![(x(lo), y(0.0))];
        let mut prev = 0.0;
        for (e, p) in f.steps() {
            pts.push((x(e), y(prev)));
            pts.push((x(e), y(p)));
            prev = p;
        }
        pts.push((x(hi), y(prev)));
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name} (min {:.3}, mean {:.3})</text>\n",
            pad + 8.0,
            pad + 16.0 + 14.0 * i as f64,
            f.min(),
            f.mean()
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">error {lo:.3} .. {hi:.3}</text>\n</svg>\n",
        w / 2.0 - 50.0,
        h - 10.0
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edf_table_endpoints() {
        let a = Edf::new(&[0.3, 0.1, 0.2]).unwrap();
        let b = Edf::new(&[0.25]).unwrap();
        let mut buf = Vec::new();
        write_edf_csv(&mut buf, &[("a", &a), ("b", &b)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "error,a,b");
        assert_eq!(lines[1], "0.1,0,0");
        assert!(lines.last().unwrap().ends_with(",1,1"));
        assert_eq!(lines.len(), 1 + 4 + 1);
    }

    #[test]
    fn svg_has_one_line_per_edf() {
        let a = Edf::new(&[0.3, 0.1]).unwrap();
        let svg = edf_svg(&[("a", &a), ("b", &a)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
