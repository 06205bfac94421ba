use std::fmt;

/// Canonical class names, indexed by class id.
pub const CLASS_NAMES: [&str; 14] = [
    "N", "7_BA", "7_IR", "7_OR1", "7_OR2", "7_OR3", "14_BA", "14_IR", "14_OR1", "21_BA", "21_IR",
    "21_OR1", "21_OR2", "21_OR3",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// One of the 14 bearing conditions: Normal plus 13 fault types at 0 hp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaultLabel(u8);

impl FaultLabel {
    pub const NORMAL: FaultLabel = FaultLabel(0);

    pub fn from_id(id: usize) -> Option<Self> {
        (id < NUM_CLASSES).then_some(FaultLabel(id as u8))
    }

    /// Parses a canonical name. The underscore is optional, so `14OR1`
    /// and `14_OR1` name the same class.
    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        if let Some(i) = CLASS_NAMES.iter().position(|c| *c == name) {
            return Some(FaultLabel(i as u8));
        }
        let squashed: String = name.chars().filter(|c| *c != '_').collect();
        CLASS_NAMES
            .iter()
            .position(|c| c.replace('_', "") == squashed)
            .map(|i| FaultLabel(i as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = FaultLabel> {
        (0..NUM_CLASSES as u8).map(FaultLabel)
    }
}

impl fmt::Display for FaultLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
