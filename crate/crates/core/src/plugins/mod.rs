//! Built-in tools: calculator, code interpreter, SQL, keyword search, shell,
//! the finish/answer tool, and a sleep tool that simulates latency.

mod calculator;
pub mod code;
mod finish;
mod process;
pub mod search;
mod shell;
mod sleep;
pub mod sql;

pub use calculator::{calculator_execute, evaluate, format_significant, CalcError, CalculatorPlugin};
pub use code::{CodeConfig, CodePlugin, SandboxJob, SandboxResult};
pub use finish::{extract_answer, finish_parse, FinishPlugin};
pub use process::{run_capped, ProcError, ProcOutput};
pub use search::{Bm25Params, Document, SearchIndex, SearchPlugin};
pub use shell::{shell_execute, ShellConfig, ShellPlugin};
pub use sleep::SleepPlugin;
pub use sql::{SqlConfig, SqlPlugin};
