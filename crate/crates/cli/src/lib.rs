//! Scenario runner for the power market models: loads TOML scenarios (files
//! or built-ins), executes them and writes CSV results plus a manifest.

pub mod builtins;
pub mod error;
pub mod run;
pub mod scenario;

use std::path::{Path, PathBuf};

pub use error::{CliError, Result};
pub use run::{run_scenario, Artifacts};
pub use scenario::Scenario;

/// Resolves `name` as a file path, then a built-in, then `<config_dir>/<name>.toml`.
pub fn resolve_scenario(name: &str, config_dir: &Path) -> Result<Scenario> {
    let path = Path::new(name);
    if path.is_file() {
        return Scenario::load(path);
    }
    if let Some(sc) = builtins::builtin(name) {
        return sc;
    }
    let candidate = config_dir.join(format!("{name}.toml"));
    if candidate.is_file() {
        return Scenario::load(&candidate);
    }
    Err(CliError::UnknownScenario(name.to_string()))
}

/// Output directory precedence: explicit flag, scenario key, then `base`.
/// Results always land in a subdirectory named after the scenario.
pub fn output_dir(flag: Option<&Path>, sc: &Scenario, base: &Path) -> PathBuf {
    let root = flag.map(Path::to_path_buf).or_else(|| sc.output.clone()).unwrap_or_else(|| base.to_path_buf());
    root.join(&sc.name)
}
