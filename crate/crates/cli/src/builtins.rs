//! Scenarios shipped with the binary, and discovery of user scenario files.

use std::path::{Path, PathBuf};

use crate::error::{io_err, Result};
use crate::scenario::Scenario;

/// `(name, TOML)` in listing order.
pub const BUILTINS: [(&str, &str); 10] = [
    ("fig1", include_str!("../scenarios/fig1.toml")),
    ("fig2", include_str!("../scenarios/fig2.toml")),
    ("fig3_r001", include_str!("../scenarios/fig3_r001.toml")),
    ("fig4_r1000", include_str!("../scenarios/fig4_r1000.toml")),
    ("fig5", include_str!("../scenarios/fig5.toml")),
    ("fig6", include_str!("../scenarios/fig6.toml")),
    ("fig7", include_str!("../scenarios/fig7.toml")),
    ("game_r0005", include_str!("../scenarios/game_r0005.toml")),
    ("game_r100", include_str!("../scenarios/game_r100.toml")),
    ("hjb_demo", include_str!("../scenarios/hjb_demo.toml")),
];

pub fn builtin(name: &str) -> Option<Result<Scenario>> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| Scenario::from_toml(text, Path::new(&format!("<builtin {n}>"))))
}

/// `*.toml` files in `dir`, sorted by file name. A missing directory is empty.
pub fn user_scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(format!("listing {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// One listing line per scenario: built-ins first, then user files.
#[derive(Debug, Clone, PartialEq)]
pub struct Listing {
    pub name: String,
    pub description: String,
    pub source: String,
}

pub fn list_scenarios(config_dir: Option<&Path>) -> Result<Vec<Listing>> {
    let mut out = Vec::new();
    for (name, _) in BUILTINS {
        let sc = builtin(name).expect("listed builtin")?;
        out.push(Listing { name: sc.name, description: sc.description, source: "builtin".into() });
    }
    if let Some(dir) = config_dir {
        for path in user_scenario_files(dir)? {
            let sc = Scenario::load(&path)?;
            out.push(Listing { name: sc.name, description: sc.description, source: path.display().to_string() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_match_names() {
        for (name, _) in BUILTINS {
            let sc = builtin(name).unwrap().unwrap();
            assert_eq!(sc.name, name);
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn listing_includes_user_files() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(list_scenarios(Some(dir.path())).unwrap().len(), 10);
        std::fs::write(dir.path().join("mine.toml"), "name = \"mine\"\nmodel = \"hjb\"\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let all = list_scenarios(Some(dir.path())).unwrap();
        assert_eq!(all.len(), 11);
        assert_eq!(all[10].name, "mine");
    }
}
