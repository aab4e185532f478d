//! SQL executor over one private SQLite database per trajectory.
//!
//! Observations render a header line with the 0-based column positions,
//! then one line per row with tab-separated values, then a reminder of the
//! remaining turn budget:
//!
//! ```text
//! 0
//! 1001
//! <reminder>You have 5 turns left to complete the task.</reminder>
//! ```
//!
//! The reminder shows the budget available when the query was issued; the
//! budget is then decremented. Engine errors are returned as valid
//! observations so the policy can repair its query.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde_json::Value;

use crate::server::{EnvData, EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::between_last;
use crate::trajectory::StopTokenSet;

pub const DB_PATH_KEY: &str = "db_path";
pub const REMAINING_TURNS_KEY: &str = "remaining_turns";
/// Extra field carrying the turn budget for a fresh state.
pub const MAX_TURNS_FIELD: &str = "max_turns";

static DB_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct SqlConfig {
    /// Template database: a SQLite file to copy, or a `.sql` script to run
    /// into a new database.
    pub fixture: PathBuf,
    /// Where per-trajectory database files live.
    pub scratch_dir: PathBuf,
    pub default_turns: u64,
    pub row_cap: usize,
    pub query_timeout: Duration,
}

/// Creates a database at `dest` from `fixture`.
pub fn materialize_fixture(fixture: &Path, dest: &Path) -> Result<(), String> {
    if fixture.extension().is_some_and(|e| e == "sql") {
        let script = std::fs::read_to_string(fixture).map_err(|e| format!("{}: {e}", fixture.display()))?;
        let conn = Connection::open(dest).map_err(|e| e.to_string())?;
        conn.execute_batch(&script).map_err(|e| format!("{}: {e}", fixture.display()))
    } else {
        std::fs::copy(fixture, dest).map(|_| ()).map_err(|e| format!("{}: {e}", fixture.display()))
    }
}

fn render_value(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "NULL".into(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => f.to_string(),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
    }
}

/// Runs one statement and renders its result table. At most `row_cap` rows
/// are shown; a `...` line marks omitted rows.
pub fn run_query(conn: &Connection, query: &str, row_cap: usize) -> rusqlite::Result<String> {
    let mut stmt = conn.prepare(query)?;
    let ncols = stmt.column_count();
    let mut lines = Vec::new();
    if ncols > 0 {
        lines.push((0..ncols).map(|i| i.to_string()).collect::<Vec<_>>().join("\t"));
    }
    let mut rows = stmt.raw_query();
    let mut shown = 0;
    while let Some(row) = rows.next()? {
        if shown == row_cap {
            lines.push("...".into());
            break;
        }
        let vals: Vec<String> = (0..ncols).map(|i| row.get_ref(i).map(render_value)).collect::<Result<_, _>>()?;
        lines.push(vals.join("\t"));
        shown += 1;
    }
    Ok(lines.join("\n"))
}

/// Sorted result rows of `query`, used to compare queries by execution.
pub fn result_rows(conn: &Connection, query: &str) -> rusqlite::Result<Vec<Vec<String>>> {
    let mut stmt = conn.prepare(query)?;
    let ncols = stmt.column_count();
    let mut rows = stmt.raw_query();
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        out.push((0..ncols).map(|i| row.get_ref(i).map(render_value)).collect::<Result<_, _>>()?);
    }
    out.sort();
    Ok(out)
}

pub fn reminder(turns_left: u64) -> String {
    format!("<reminder>You have {turns_left} turns left to complete the task.</reminder>")
}

/// Executes `query` against the database at `db_path` and appends the
/// reminder. The caller handles the budget.
pub fn sql_execute(db_path: &Path, query: &str, turns_left: u64, row_cap: usize, timeout: Duration) -> String {
    let body = Connection::open(db_path)
        .and_then(|conn| {
            let deadline = Instant::now() + timeout;
            conn.progress_handler(1000, Some(move || Instant::now() > deadline));
            run_query(&conn, query, row_cap)
        })
        .unwrap_or_else(|e| format!("Error: {e}"));
    if body.is_empty() {
        reminder(turns_left)
    } else {
        format!("{body}\n{}", reminder(turns_left))
    }
}

pub struct SqlPlugin {
    cfg: SqlConfig,
    stops: StopTokenSet,
}

impl SqlPlugin {
    pub fn new(cfg: SqlConfig) -> Result<Self, String> {
        if !cfg.fixture.exists() {
            return Err(format!("SQL fixture not found: {}", cfg.fixture.display()));
        }
        std::fs::create_dir_all(&cfg.scratch_dir).map_err(|e| format!("{}: {e}", cfg.scratch_dir.display()))?;
        Ok(Self { cfg, stops: StopTokenSet::new("sql", ["</sql>"]).expect("non-empty") })
    }

    pub fn config(&self) -> &SqlConfig {
        &self.cfg
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).take(64).collect()
}

#[async_trait]
impl ToolPlugin for SqlPlugin {
    fn tool_id(&self) -> &str {
        "sql"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        between_last(action_text, "<sql>", "</sql>").map(|s| s.trim().to_owned())
    }

    fn init_env(&self, trajectory_id: &str) -> Result<EnvData, ToolError> {
        let n = DB_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = self.cfg.scratch_dir.join(format!("{}-{}-{n}.sqlite", sanitize(trajectory_id), std::process::id()));
        materialize_fixture(&self.cfg.fixture, &path).map_err(ToolError::Env)?;
        Ok(EnvData::from([(DB_PATH_KEY.to_owned(), Value::from(path.to_string_lossy().into_owned()))]))
    }

    async fn conduct_action(&self, env: &mut EnvState, input: &str, extra: &Extra) -> Result<ToolOutput, ToolError> {
        let remaining = env
            .get_u64(REMAINING_TURNS_KEY)
            .or_else(|| extra.get(MAX_TURNS_FIELD).and_then(Value::as_u64))
            .unwrap_or(self.cfg.default_turns);
        if remaining == 0 {
            env.data.insert(REMAINING_TURNS_KEY.into(), 0.into());
            return Ok(ToolOutput::done(reminder(0)));
        }
        let db = PathBuf::from(env.get_str(DB_PATH_KEY).ok_or_else(|| ToolError::Env("no database path".into()))?);
        let query = input.to_owned();
        let (row_cap, timeout) = (self.cfg.row_cap, self.cfg.query_timeout);
        let obs = tokio::task::spawn_blocking(move || sql_execute(&db, &query, remaining, row_cap, timeout))
            .await
            .map_err(|e| ToolError::Crash(e.to_string()))?;
        env.data.insert(REMAINING_TURNS_KEY.into(), (remaining - 1).into());
        Ok(ToolOutput::ok(obs))
    }

    fn teardown_env(&self, env: &EnvState) {
        if let Some(p) = env.get_str(DB_PATH_KEY) {
            let _ = std::fs::remove_file(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/pet_1.sql")
    }

    fn fixture_db(dir: &Path) -> PathBuf {
        let p = dir.join("pet.sqlite");
        materialize_fixture(&fixture(), &p).unwrap();
        p
    }

    #[test]
    fn cat_owner_subquery() {
        let dir = tempfile::tempdir().unwrap();
        let db = fixture_db(dir.path());
        let q = "SELECT StuID FROM Has_Pet WHERE PetID IN (SELECT PetID FROM Pets WHERE PetType = 'cat');";
        assert_eq!(
            sql_execute(&db, q, 5, 50, Duration::from_secs(5)),
            "0\n1001\n<reminder>You have 5 turns left to complete the task.</reminder>"
        );
    }

    #[test]
    fn select_constant_on_empty_db() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("empty.sqlite");
        let out = sql_execute(&db, "SELECT 1", 3, 10, Duration::from_secs(5));
        assert_eq!(out.lines().nth(1), Some("1"));
    }

    #[test]
    fn engine_errors_become_observations() {
        let dir = tempfile::tempdir().unwrap();
        let db = fixture_db(dir.path());
        let out = sql_execute(&db, "SELEC StuID FROM Student", 2, 10, Duration::from_secs(5));
        assert!(out.starts_with("Error: "), "{out}");
        assert!(out.contains("syntax error"));
        assert!(out.ends_with(&reminder(2)));
    }

    #[test]
    fn rows_are_capped() {
        let dir = tempfile::tempdir().unwrap();
        let db = fixture_db(dir.path());
        let out = sql_execute(&db, "SELECT StuID, LName FROM Student ORDER BY StuID", 1, 3, Duration::from_secs(5));
        let lines: Vec<_> = out.lines().collect();
        assert_eq!(lines[..5], ["0\t1", "1001\tSmith", "1002\tKim", "1003\tJones", "..."]);
    }

    #[test]
    fn runaway_query_is_interrupted() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("e.sqlite");
        let q = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x+1 FROM c) SELECT count(*) FROM c";
        let t = Instant::now();
        let out = sql_execute(&db, q, 1, 10, Duration::from_millis(100));
        assert!(out.contains("interrupted"), "{out}");
        assert!(t.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn equivalent_queries_share_rows() {
        let dir = tempfile::tempdir().unwrap();
        let conn = Connection::open(fixture_db(dir.path())).unwrap();
        let gold = "SELECT stuid FROM student EXCEPT SELECT T1.stuid FROM student AS T1 JOIN has_pet AS T2 ON T1.stuid = T2.stuid JOIN pets AS T3 ON T3.petid = T2.petid WHERE T3.pettype = 'cat'";
        let pred = "SELECT StuID FROM Student WHERE StuID NOT IN (SELECT StuID FROM Has_Pet WHERE PetID IN (SELECT PetID FROM Pets WHERE PetType = 'cat'))";
        assert_eq!(result_rows(&conn, gold).unwrap(), result_rows(&conn, pred).unwrap());
        assert_eq!(result_rows(&conn, gold).unwrap().len(), 9);
    }

    #[tokio::test]
    async fn budget_counts_down_then_ends() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = SqlPlugin::new(SqlConfig {
            fixture: fixture(),
            scratch_dir: dir.path().join("scratch"),
            default_turns: 2,
            row_cap: 10,
            query_timeout: Duration::from_secs(5),
        })
        .unwrap();
        let data = plugin.init_env("t/1").unwrap();
        let mut env = EnvState { trajectory_id: "t/1".into(), tool_id: "sql".into(), data, created_at: 0, last_used: 0 };
        let a = plugin.conduct_action(&mut env, "SELECT 1", &Extra::new()).await.unwrap();
        assert!(a.observation.ends_with(&reminder(2)));
        let b = plugin.conduct_action(&mut env, "SELECT 1", &Extra::new()).await.unwrap();
        assert!(b.observation.ends_with(&reminder(1)) && !b.done);
        let c = plugin.conduct_action(&mut env, "SELECT 1", &Extra::new()).await.unwrap();
        assert!(c.done);
        plugin.teardown_env(&env);
        assert_eq!(std::fs::read_dir(dir.path().join("scratch")).unwrap().count(), 0);
    }

    #[test]
    fn missing_fixture_is_reported() {
        let err = SqlPlugin::new(SqlConfig {
            fixture: "/nonexistent/db.sqlite".into(),
            scratch_dir: std::env::temp_dir(),
            default_turns: 5,
            row_cap: 10,
            query_timeout: Duration::from_secs(1),
        })
        .err()
        .unwrap();
        assert!(err.contains("/nonexistent/db.sqlite"));
    }
}
