//! Prices per dish class and the resulting bill, in integer minor units.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    pub currency: String,
    /// Price of one dish per class name, in minor currency units.
    pub prices: BTreeMap<String, u64>,
}

impl PriceTable {
    /// Every class priced at `amount`.
    pub fn uniform(names: &[String], amount: u64, currency: &str) -> Self {
        PriceTable {
            currency: currency.to_string(),
            prices: names.iter().map(|n| (n.clone(), amount)).collect(),
        }
    }

    /// Checks that every class in `names` has a price.
    pub fn covers(&self, names: &[String]) -> Result<()> {
        match names.iter().find(|n| !self.prices.contains_key(*n)) {
            Some(n) => Err(Error::MissingPrice(n.clone())),
            None => Ok(()),
        }
    }

    pub fn price(&self, name: &str) -> Result<u64> {
        self.prices.get(name).copied().ok_or_else(|| Error::MissingPrice(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillLine {
    /// Position in the stack, 0 at the top.
    pub dish: usize,
    pub class: usize,
    pub name: String,
    pub confidence: f64,
    pub price: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bill {
    pub currency: String,
    pub lines: Vec<BillLine>,
    pub total: u64,
}

impl Bill {
    /// Prices each `(class, name, confidence)` in stack order.
    pub fn new(table: &PriceTable, dishes: &[(usize, String, f64)]) -> Result<Self> {
        let mut lines = Vec::with_capacity(dishes.len());
        for (i, (class, name, confidence)) in dishes.iter().enumerate() {
            lines.push(BillLine {
                dish: i,
                class: *class,
                name: name.clone(),
                confidence: *confidence,
                price: table.price(name)?,
            });
        }
        let total = lines.iter().map(|l| l.price).sum();
        Ok(Bill {
            currency: table.currency.clone(),
            lines,
            total,
        })
    }

    /// Dish count per class name.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for l in &self.lines {
            *out.entry(l.name.as_str()).or_insert(0) += 1;
        }
        out
    }
}

impl fmt::Display for Bill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(
                f,
                "dish {:>2}  {:<10} {:>5.1}%  {:>8} {}",
                l.dish + 1,
                l.name,
                100.0 * l.confidence,
                l.price,
                self.currency
            )?;
        }
        write!(f, "{} dishes, total {} {}", self.lines.len(), self.total, self.currency)
    }
}
