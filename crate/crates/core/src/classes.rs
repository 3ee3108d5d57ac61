//! Object class registry and size-group routing.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a [`ClassRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeGroup {
    Small,
    Medium,
    Large,
}

impl SizeGroup {
    pub const ALL: [SizeGroup; 3] = [SizeGroup::Small, SizeGroup::Medium, SizeGroup::Large];

    pub fn as_str(&self) -> &'static str {
        match self {
            SizeGroup::Small => "small",
            SizeGroup::Medium => "medium",
            SizeGroup::Large => "large",
        }
    }
}

impl fmt::Display for SizeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SizeGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(SizeGroup::Small),
            "medium" => Ok(SizeGroup::Medium),
            "large" => Ok(SizeGroup::Large),
            other => Err(format!("unknown size group {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassError {
    #[error("class {0:?} is listed twice")]
    Duplicate(String),
    #[error("unknown class {0:?}")]
    Unknown(String),
    #[error("class {0:?} has no size group")]
    Ungrouped(String),
    #[error("class registry is empty")]
    Empty,
}

/// The 60 xView object classes with their size group.
pub const XVIEW_CLASSES: [(&str, SizeGroup); 60] = {
    use SizeGroup::*;
    [
        ("Fixed-wing Aircraft", Medium),
        ("Small Aircraft", Medium),
        ("Cargo Plane", Large),
        ("Helicopter", Medium),
        ("Passenger Vehicle", Small),
        ("Small Car", Small),
        ("Bus", Medium),
        ("Pickup Truck", Small),
        ("Utility Truck", Small),
        ("Truck", Small),
        ("Cargo Truck", Small),
        ("Truck w/Box", Small),
        ("Truck Tractor", Small),
        ("Trailer", Small),
        ("Truck w/Flatbed", Small),
        ("Truck w/Liquid", Small),
        ("Crane Truck", Medium),
        ("Railway Vehicle", Medium),
        ("Passenger Car", Medium),
        ("Cargo Car", Medium),
        ("Flat Car", Medium),
        ("Tank car", Medium),
        ("Locomotive", Medium),
        ("Maritime Vessel", Large),
        ("Motorboat", Small),
        ("Sailboat", Small),
        ("Tugboat", Medium),
        ("Barge", Large),
        ("Fishing Vessel", Medium),
        ("Ferry", Large),
        ("Yacht", Medium),
        ("Container Ship", Large),
        ("Oil Tanker", Large),
        ("Engineering Vehicle", Medium),
        ("Tower crane", Large),
        ("Container Crane", Large),
        ("Reach Stacker", Medium),
        ("Straddle Carrier", Medium),
        ("Mobile Crane", Medium),
        ("Dump Truck", Medium),
        ("Haul Truck", Medium),
        ("Scraper/Tractor", Medium),
        ("Front loader/Bulldozer", Medium),
        ("Excavator", Medium),
        ("Cement Mixer", Medium),
        ("Ground Grader", Medium),
        ("Hut/Tent", Small),
        ("Shed", Medium),
        ("Building", Large),
        ("Aircraft Hangar", Large),
        ("Damaged Building", Medium),
        ("Facility", Large),
        ("Construction Site", Large),
        ("Vehicle Lot", Large),
        ("Helipad", Medium),
        ("Storage Tank", Medium),
        ("Shipping container lot", Large),
        ("Shipping Container", Small),
        ("Pylon", Small),
        ("Tower", Medium),
    ]
};

/// Class used for vehicle counting.
pub const SMALL_CAR: &str = "Small Car";

/// Ordered class names, each routed to one size group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    names: Vec<String>,
    groups: Vec<SizeGroup>,
    index: HashMap<String, ClassId>,
}

impl ClassRegistry {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, SizeGroup)>) -> Result<Self, ClassError> {
        let mut reg = ClassRegistry {
            names: Vec::new(),
            groups: Vec::new(),
            index: HashMap::new(),
        };
        for (name, group) in entries {
            let name = name.into();
            if reg.index.contains_key(&name) {
                return Err(ClassError::Duplicate(name));
            }
            reg.index.insert(name.clone(), ClassId(reg.names.len() as u32));
            reg.names.push(name);
            reg.groups.push(group);
        }
        if reg.names.is_empty() {
            return Err(ClassError::Empty);
        }
        Ok(reg)
    }

    /// Build from a name list plus a name-to-group map covering every name.
    pub fn from_parts(names: &[String], groups: &HashMap<String, SizeGroup>) -> Result<Self, ClassError> {
        let entries = names
            .iter()
            .map(|n| groups.get(n).map(|g| (n.clone(), *g)).ok_or_else(|| ClassError::Ungrouped(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn xview() -> Self {
        Self::new(XVIEW_CLASSES).expect("xView class table is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ClassId, ClassError> {
        self.index.get(name).copied().ok_or_else(|| ClassError::Unknown(name.to_string()))
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn group(&self, id: ClassId) -> Option<SizeGroup> {
        self.groups.get(id.0 as usize).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len() as u32).map(ClassId)
    }

    pub fn group_map(&self) -> HashMap<String, SizeGroup> {
        self.names.iter().cloned().zip(self.groups.iter().copied()).collect()
    }
}

impl Default for ClassRegistry {
    fn default() -> Self {
        Self::xview()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xview_registry() {
        let reg = ClassRegistry::xview();
        assert_eq!(reg.len(), 60);
        let car = reg.id(SMALL_CAR).unwrap();
        assert_eq!(reg.name(car), Some("Small Car"));
        assert_eq!(reg.group(car), Some(SizeGroup::Small));
        assert_eq!(reg.group(reg.id("Building").unwrap()), Some(SizeGroup::Large));
        for g in SizeGroup::ALL {
            assert!(reg.ids().any(|id| reg.group(id) == Some(g)));
        }
        assert!(matches!(reg.id("Spaceship"), Err(ClassError::Unknown(_))));
    }

    #[test]
    fn registry_rejects_duplicates_and_gaps() {
        assert!(matches!(
            ClassRegistry::new([("a", SizeGroup::Small), ("a", SizeGroup::Large)]),
            Err(ClassError::Duplicate(_))
        ));
        let names = vec!["a".to_string(), "b".to_string()];
        let groups = HashMap::from([("a".to_string(), SizeGroup::Small)]);
        assert_eq!(ClassRegistry::from_parts(&names, &groups), Err(ClassError::Ungrouped("b".into())));
        assert_eq!(ClassRegistry::new(Vec::<(String, SizeGroup)>::new()), Err(ClassError::Empty));
    }
}
