use std::fmt::Write;
use std::path::Path;

use hocle_core::fields_io::sha256_hex;

use crate::manifest::RunManifest;
use crate::Failure;

/// Re-renders the tabular outputs listed in a manifest as Markdown, after
/// checking every listed file against its recorded hash.
pub fn render(manifest_path: &Path) -> Result<String, Failure> {
    let man = RunManifest::load(manifest_path).map_err(Failure::Config)?;
    let root = if manifest_path.is_dir() { manifest_path.to_path_buf() } else { manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf() };
    let mut s = String::new();
    let _ = writeln!(s, "# {} run ({})\n", man.subcommand, root.display());
    let failed: Vec<&str> = man.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let _ = writeln!(s, "{} of {} checks passed{}", man.checks.len() - failed.len(), man.checks.len(), if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) });
    let total: f64 = man.timings.iter().map(|t| t.seconds).sum();
    let _ = writeln!(s, "wall clock {total:.2} s over {} timed stages\n", man.timings.len());
    for f in &man.files {
        let bytes = std::fs::read(root.join(&f.path)).map_err(|e| Failure::Runtime(format!("{}: {e}", f.path)))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Failure::Runtime(format!("{}: contents do not match the manifest hash", f.path)));
        }
        let text = String::from_utf8_lossy(&bytes);
        if !f.path.ends_with(".csv") || text.starts_with('#') {
            continue;
        }
        let _ = writeln!(s, "## {}\n", f.path);
        for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
            s.push_str(&markdown_table(block));
            s.push('\n');
        }
    }
    Ok(s)
}

fn markdown_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    let ncol = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut width = vec![3usize; ncol];
    for r in &rows {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.len());
        }
    }
    let line = |r: &[&str]| {
        let cells: Vec<String> = (0..ncol).map(|k| format!("{:>w$}", r.get(k).copied().unwrap_or(""), w = width[k])).collect();
        format!("| {} |\n", cells.join(" | "))
    };
    let mut s = String::new();
    if let Some((head, body)) = rows.split_first() {
        s.push_str(&line(head));
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        s.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for r in body {
            s.push_str(&line(r));
        }
    }
    s
}
