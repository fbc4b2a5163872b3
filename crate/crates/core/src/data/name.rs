use crate::error::{Error, Result};

/// Building class and subclass recovered from a dataset entry name such as
/// `COMMERCIALcastle_mesh0365`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildingName {
    pub building_class: String,
    /// Vocabulary form: underscores replaced by spaces.
    pub subclass: String,
}

/// Splits `name` into its leading uppercase run and the following run of
/// lowercase letters/underscores, with any `_mesh` suffix removed.
pub fn parse_building_name(name: &str) -> Result<BuildingName> {
    let upper_end = name.find(|c: char| !c.is_ascii_uppercase()).unwrap_or(name.len());
    if upper_end == 0 {
        return Err(Error::BuildingName(name.to_string()));
    }
    let tail = &name[upper_end..];
    let lower_end = tail.find(|c: char| !(c.is_ascii_lowercase() || c == '_')).unwrap_or(tail.len());
    let run = &tail[..lower_end];
    let run = run.strip_suffix("_mesh").unwrap_or(run);
    if !run.chars().any(|c| c.is_ascii_lowercase()) {
        return Err(Error::BuildingName(name.to_string()));
    }
    Ok(BuildingName { building_class: name[..upper_end].to_string(), subclass: run.replace('_', " ") })
}

/// Inverse of [`parse_building_name`] for a given mesh number.
pub fn format_building_name(building_class: &str, subclass: &str, mesh: usize) -> String {
    format!("{building_class}{}_mesh{mesh:04}", subclass.replace(' ', "_"))
}
