//! Symbol interning for the stock universe.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Index of a stock within a session's universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bidirectional symbol <-> id map. Ids are assigned in first-appearance
/// order so that interning the same input always yields the same table.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a table from an explicit universe list, preserving order.
    pub fn from_universe<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        let mut table = Self::new();
        for s in symbols {
            let s = s.as_ref();
            if table.ids.contains_key(s) {
                return Err(Error::Config(format!("duplicate symbol {s:?} in universe")));
            }
            table.intern(s)?;
        }
        Ok(table)
    }

    /// Intern a symbol, returning its id. Symbols are ASCII, 1..=8 chars.
    pub fn intern(&mut self, symbol: &str) -> Result<SymbolId> {
        if let Some(&id) = self.ids.get(symbol) {
            return Ok(id);
        }
        validate_symbol(symbol)?;
        let id = SymbolId(self.names.len() as u32);
        self.names.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, symbol: &str) -> Option<SymbolId> {
        self.ids.get(symbol).copied()
    }

    pub fn name(&self, id: SymbolId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymbolId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, s)| (SymbolId(i as u32), s.as_str()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn validate_symbol(symbol: &str) -> Result<()> {
    if symbol.is_empty() || symbol.len() > 8 {
        return Err(Error::Config(format!(
            "symbol {symbol:?} must be 1..=8 characters"
        )));
    }
    if !symbol
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-')
    {
        return Err(Error::Config(format!(
            "symbol {symbol:?} contains invalid characters"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable() {
        let mut t = SymbolTable::new();
        let a = t.intern("AAPL").unwrap();
        let b = t.intern("MSFT").unwrap();
        assert_eq!(t.intern("AAPL").unwrap(), a);
        assert_eq!(t.name(a), "AAPL");
        assert_eq!(t.name(b), "MSFT");
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn rejects_bad_symbols() {
        let mut t = SymbolTable::new();
        assert!(t.intern("").is_err());
        assert!(t.intern("TOOLONGNAME").is_err());
        assert!(t.intern("A B").is_err());
    }

    #[test]
    fn universe_rejects_duplicates() {
        assert!(SymbolTable::from_universe(&["A", "B", "A"]).is_err());
    }
}
