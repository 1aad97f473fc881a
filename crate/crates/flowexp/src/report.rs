//! Machine-readable reporting: JSON for reports and flow results, CSV for
//! sweep tables. Field ordering is stable and rationals are rendered both
//! exactly and as decimals.

use crate::expansions::{ErrorReport, OrderFit};
use crate::flows::FlowResult;
use serde_json::{json, Value};

pub fn error_report_to_json(r: &ErrorReport) -> Value {
    json!({
        "method": r.method,
        "params": r.params,
        "scale_name": r.scale_name,
        "points": r.points.iter().map(|p| json!({
            "scale": p.scale,
            "approx": p.approx,
            "oracle": p.oracle,
            "error": p.error,
        })).collect::<Vec<_>>(),
    })
}

pub fn error_report_from_json(v: &Value) -> Option<ErrorReport> {
    let points = v
        .get("points")?
        .as_array()?
        .iter()
        .map(|p| {
            Some(crate::expansions::SweepPoint {
                scale: p.get("scale")?.as_f64()?,
                approx: p
                    .get("approx")?
                    .as_array()?
                    .iter()
                    .map(|x| x.as_f64())
                    .collect::<Option<_>>()?,
                oracle: p
                    .get("oracle")?
                    .as_array()?
                    .iter()
                    .map(|x| x.as_f64())
                    .collect::<Option<_>>()?,
                error: p.get("error")?.as_f64()?,
            })
        })
        .collect::<Option<Vec<_>>>()?;
    Some(ErrorReport {
        method: v.get("method")?.as_str()?.to_string(),
        params: v.get("params")?.clone(),
        scale_name: v.get("scale_name")?.as_str()?.to_string(),
        points,
    })
}

pub fn order_fit_to_json(f: &OrderFit) -> Value {
    json!({
        "slope": f.slope,
        "intercept": f.intercept,
        "residual": f.residual,
        "scale_range": [f.scale_range.0, f.scale_range.1],
        "points_used": f.points_used,
    })
}

pub fn flow_result_to_json(r: &FlowResult) -> Value {
    json!({
        "endpoint": r.endpoint,
        "jacobian": r.jacobian.as_ref().map(|j| j.0.clone()),
        "steps": r.steps,
        "rejected": r.rejected,
        "error_estimate": r.error_estimate,
    })
}

/// Sweep table: `scale,error,slope_so_far` with the cumulative least-squares
/// slope over the points seen so far (blank until two points exist).
pub fn sweep_to_csv(r: &ErrorReport) -> String {
    let mut out = String::from("scale,error,slope_so_far\n");
    let pairs = r.pairs();
    for i in 0..pairs.len() {
        let slope = if i >= 1 {
            cumulative_slope(&pairs[..=i])
                .map(|s| format!("{s}"))
                .unwrap_or_default()
        } else {
            String::new()
        };
        out.push_str(&format!("{},{},{}\n", pairs[i].0, pairs[i].1, slope));
    }
    out
}

fn cumulative_slope(pairs: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(s, e)| *s > 0.0 && *e > 0.0)
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = usable.iter().map(|(s, _)| s.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|(_, e)| e.ln()).collect();
    let n = lx.len() as f64;
    let sx: f64 = lx.iter().sum();
    let sy: f64 = ly.iter().sum();
    let sxx: f64 = lx.iter().map(|v| v * v).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
