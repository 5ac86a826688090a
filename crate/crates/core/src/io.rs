//! File formats: observation CSVs, posterior draws, session JSON and study outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::design::DesignSession;
use crate::error::{Error, Result};
use crate::fatigue_model::TestConfig;
use crate::likelihood::{Dataset, Observation};
use crate::posterior::PosteriorDraws;
use crate::sim_harness::StudyResult;

pub const DATA_HEADER: [&str; 3] = ["x", "t", "delta"];
pub const DRAWS_HEADER: [&str; 3] = ["A", "B", "nu"];

pub const AVAR_FILE: &str = "avar_trajectory.csv";
pub const M_FILE: &str = "m_measure.csv";
pub const ALLOCATION_FILE: &str = "allocation.csv";
pub const PER_RUN_FILE: &str = "per_run_allocation.csv";
pub const TRIALS_FILE: &str = "trials.csv";

pub const AVAR_HEADER: &str = "strategy,run,mean_avar,se";
pub const M_HEADER: &str = "strategy,run,M";
pub const ALLOCATION_HEADER: &str = "strategy,q,fraction";
pub const PER_RUN_HEADER: &str = "strategy,run,q,fraction";
pub const TRIALS_HEADER: &str = "strategy,trial,run,criterion,q,t,delta,A_hat,B_hat,nu_hat,avar,flags";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Parse an `x,t,delta` file. With `stress_as_fraction`, `x` is read as a
/// fraction of the ultimate stress.
pub fn parse_dataset(text: &str, cfg: &TestConfig, stress_as_fraction: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Validation(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != DATA_HEADER {
        return Err(Error::Validation(format!(
            "line 1: expected header 'x,t,delta', found '{}'",
            header.join(",")
        )));
    }
    let mut data = Dataset::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Validation(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("line {line}: {name} '{}' is not a number", &record[i])))
        };
        let x = field(0, "x")?;
        let t = field(1, "t")?;
        let delta: u8 = record[2]
            .parse()
            .map_err(|_| Error::Validation(format!("line {line}: delta '{}' must be 0 or 1", &record[2])))?;
        let obs = Observation {
            x: if stress_as_fraction { cfg.stress_from_fraction(x) } else { x },
            t,
            delta,
        };
        obs.validate(cfg)
            .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        data.push(obs);
    }
    Ok(data)
}

pub fn read_dataset(path: &Path, cfg: &TestConfig, stress_as_fraction: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, cfg, stress_as_fraction).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write bytes to `path` via a temporary file in the same directory and a
/// rename, so readers never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DATA_HEADER).map_err(|e| csv_error(path, e))?;
    for o in data.iter() {
        w.write_record([o.x.to_string(), o.t.to_string(), o.delta.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    atomic_write(path, &finish(w, path)?)
}

pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DRAWS_HEADER).map_err(|e| csv_error(path, e))?;
    for d in &draws.draws {
        w.write_record([d.a.to_string(), d.b.to_string(), d.nu.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    atomic_write(path, &finish(w, path)?)
}

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

pub fn session_from_json(text: &str) -> Result<DesignSession> {
    let session: DesignSession = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    session.validate()?;
    Ok(session)
}

pub fn load_session(path: &Path) -> Result<DesignSession> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    session_from_json(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))
}

pub fn save_session(path: &Path, session: &DesignSession) -> Result<()> {
    session.validate()?;
    let mut text = to_pretty_json(session)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Create `dir` if needed and confirm a file can be written there.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    probe.close().map_err(|e| Error::io(dir, e))
}

fn table(header: &str, rows: impl IntoIterator<Item = Vec<String>>, path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(',')).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

/// Render the five study tables, keyed by file name.
pub fn study_tables(result: &StudyResult) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let p = Path::new;
    let avar = table(
        AVAR_HEADER,
        result
            .avar_trajectory()
            .into_iter()
            .map(|r| vec![r.strategy, r.run.to_string(), r.mean_avar.to_string(), r.se.to_string()]),
        p(AVAR_FILE),
    )?;
    let m = table(
        M_HEADER,
        result
            .m_trajectory()?
            .into_iter()
            .map(|r| vec![r.strategy, r.run.to_string(), r.m.to_string()]),
        p(M_FILE),
    )?;
    let alloc = table(
        ALLOCATION_HEADER,
        result
            .allocation()
            .into_iter()
            .map(|r| vec![r.strategy, r.q.to_string(), r.fraction.to_string()]),
        p(ALLOCATION_FILE),
    )?;
    let per_run = table(
        PER_RUN_HEADER,
        result.per_run_allocation().into_iter().map(|r| {
            vec![
                r.strategy,
                r.run.map_or(String::new(), |v| v.to_string()),
                r.q.to_string(),
                r.fraction.to_string(),
            ]
        }),
        p(PER_RUN_FILE),
    )?;
    let mut rows = Vec::new();
    for t in &result.trials {
        // run 0 holds the seed observations shared by all strategies
        for o in t.seed_observations.iter() {
            rows.push(vec![
                t.strategy.clone(),
                t.trial.to_string(),
                "0".into(),
                "seed".into(),
                (o.x / result.sigma_ult).to_string(),
                o.t.to_string(),
                o.delta.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        for r in &t.runs {
            rows.push(vec![
                t.strategy.clone(),
                t.trial.to_string(),
                r.run.to_string(),
                r.criterion.to_string(),
                r.q.to_string(),
                r.observation.t.to_string(),
                r.observation.delta.to_string(),
                r.theta_hat.a.to_string(),
                r.theta_hat.b.to_string(),
                r.theta_hat.nu.to_string(),
                r.avar.to_string(),
                r.flags.iter().map(|f| f.name()).collect::<Vec<_>>().join(";"),
            ]);
        }
    }
    let trials = table(TRIALS_HEADER, rows, p(TRIALS_FILE))?;
    Ok(vec![
        (AVAR_FILE, avar),
        (M_FILE, m),
        (ALLOCATION_FILE, alloc),
        (PER_RUN_FILE, per_run),
        (TRIALS_FILE, trials),
    ])
}

pub fn write_study(dir: &Path, result: &StudyResult) -> Result<Vec<PathBuf>> {
    ensure_writable_dir(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in study_tables(result)? {
        let path = dir.join(name);
        atomic_write(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Schedule;
    use crate::fatigue_model::ModelParams;
    use crate::posterior::PriorSpec;

    fn cfg() -> TestConfig {
        TestConfig::composite_fatigue()
    }

    #[test]
    fn parses_three_rows() {
        let d = parse_dataset("x,t,delta\n600,1e6,0\n700,2e5,0\n500,6e9,1\n", &cfg(), false).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.observations[2], Observation::censored(500.0, 6e9));
    }

    #[test]
    fn fraction_stresses_are_scaled() {
        let d = parse_dataset("x,t,delta\n0.5,1e6,0\n", &cfg(), true).unwrap();
        assert_eq!(d.observations[0].x, 0.5 * cfg().sigma_ult);
    }

    #[test]
    fn bad_delta_names_the_line() {
        let err = parse_dataset("x,t,delta\n600,1e6,0\n700,2e5,2\n", &cfg(), false).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn header_is_required() {
        let err = parse_dataset("600,1e6,0\n", &cfg(), false).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("header")));
        let err = parse_dataset("x,t\n600,1e6\n", &cfg(), false).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn non_numeric_and_non_positive_values() {
        let err = parse_dataset("x,t,delta\n600,abc,0\n", &cfg(), false).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("line 2")));
        let err = parse_dataset("x,t,delta\n600,-1,0\n", &cfg(), false).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("line 2")));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset::new(vec![Observation::failure(612.25, 1.5e6), Observation::censored(480.0, 6e9)]);
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path, &cfg(), false).unwrap(), d);
    }

    #[test]
    fn draws_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        write_draws(&path, &PosteriorDraws::from_draws(vec![ModelParams::new(0.001, 0.3, 0.7)])).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text, "A,B,nu\n0.001,0.3,0.7\n");
    }

    #[test]
    fn session_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = DesignSession::new(cfg(), PriorSpec::example(), Schedule::new(12, 6).unwrap(), Dataset::default(), 1)
            .unwrap();
        save_session(&path, &s).unwrap();
        assert_eq!(load_session(&path).unwrap(), s);
        fs::write(&path, "{\"format_version\": 1}").unwrap();
        assert!(matches!(load_session(&path), Err(Error::Schema(_))));
        let missing = dir.path().join("none.json");
        assert!(matches!(load_session(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        // no temporary files are left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_directory_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(matches!(ensure_writable_dir(&file.join("sub")), Err(Error::Io { .. })));
    }
}
