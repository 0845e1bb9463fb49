//! Seeded synthetic benchmark: ten small tables drawn from shared value
//! domains, rendered with typos and alternative formats, plus the ground
//! truth of which column pairs join.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fabricate::{format_variant, keyboard_typo};
use crate::predict::{GroundTruth, JoinKind};
use crate::repo::{Repository, Table};

const FIRST_NAMES: [&str; 20] = [
    "James", "Mary", "Robert", "Patricia", "John", "Jennifer", "Michael", "Linda", "David", "Elizabeth",
    "William", "Barbara", "Richard", "Susan", "Joseph", "Jessica", "Thomas", "Sarah", "Carlos", "Aisha",
];

const LAST_NAMES: [&str; 20] = [
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez", "Martinez",
    "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas", "Taylor", "Moore", "Jackson", "Okafor",
];

const CITIES: [&str; 48] = [
    "New York", "Los Angeles", "Chicago", "Houston", "Phoenix", "Philadelphia", "San Antonio", "San Diego",
    "Dallas", "San Jose", "Austin", "Jacksonville", "Columbus", "Charlotte", "Indianapolis", "Seattle",
    "Denver", "Boston", "Nashville", "Detroit", "Portland", "Memphis", "Louisville", "Baltimore",
    "Milwaukee", "Albuquerque", "Tucson", "Fresno", "Sacramento", "Atlanta", "Omaha", "Raleigh",
    "Miami", "Oakland", "Minneapolis", "Tulsa", "Cleveland", "Wichita", "Arlington", "Tampa",
    "Honolulu", "Anaheim", "Aurora", "Pittsburgh", "Cincinnati", "Toledo", "Buffalo", "Madison",
];

const COUNTRIES: [&str; 40] = [
    "Argentina", "Australia", "Austria", "Belgium", "Brazil", "Canada", "Chile", "China", "Colombia",
    "Denmark", "Egypt", "Finland", "France", "Germany", "Greece", "India", "Indonesia", "Ireland", "Israel",
    "Italy", "Japan", "Kenya", "Mexico", "Morocco", "Netherlands", "Nigeria", "Norway", "Peru", "Poland",
    "Portugal", "Romania", "Singapore", "Spain", "Sweden", "Switzerland", "Thailand", "Turkey", "Ukraine",
    "Vietnam", "Zambia",
];

const STREETS: [&str; 24] = [
    "Main", "Oak", "Pine", "Maple", "Cedar", "Elm", "Washington", "Lake", "Hill", "Park", "Sunset", "Lincoln",
    "Jackson", "Church", "Highland", "River", "Spring", "Madison", "Franklin", "Chestnut", "Willow", "Walnut",
    "Amsterdam", "Broadway",
];

const SUFFIXES: [&str; 4] = ["Street", "Avenue", "Road", "Boulevard"];

/// Semantic value domains. Several share a surface format or overlap in raw
/// values with another domain without being joinable with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Domain {
    CustomerId,
    EmployeeId,
    ProductId,
    PersonName,
    Email,
    City,
    Country,
    Address,
    OrderDate,
    HireDate,
    BirthDate,
    Price,
    Salary,
    Age,
    Quantity,
    Rating,
    ProductCode,
}

fn iso_date(year0: usize, i: usize) -> String {
    const MONTHS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    // leap days are skipped
    let year = year0 + i / 365;
    let mut day = i % 365;
    let mut month = 0;
    while day >= MONTHS[month] {
        day -= MONTHS[month];
        month += 1;
    }
    format!("{year}-{:02}-{:02}", month + 1, day + 1)
}

fn dollars(cents: usize) -> String {
    let whole = (cents / 100).to_string();
    let mut grouped = String::new();
    for (k, c) in whole.chars().enumerate() {
        if k > 0 && (whole.len() - k).is_multiple_of(3) {
            grouped.push(',');
        }
        grouped.push(c);
    }
    format!("${grouped}.{:02}", cents % 100)
}

impl Domain {
    fn pool_size(self) -> usize {
        match self {
            CustomerId => 600,
            EmployeeId => 300,
            ProductId => 400,
            PersonName | Email => FIRST_NAMES.len() * LAST_NAMES.len(),
            City => CITIES.len(),
            Country => COUNTRIES.len(),
            Address => 400,
            OrderDate => 540,
            HireDate => 2_000,
            BirthDate => 7_000,
            Price => 500,
            Salary => 500,
            Age => 60,
            Quantity => 60,
            Rating => 41,
            ProductCode => 300,
        }
    }

    fn canonical(self, i: usize) -> String {
        let name = |i: usize| (FIRST_NAMES[i % FIRST_NAMES.len()], LAST_NAMES[i / FIRST_NAMES.len()]);
        match self {
            CustomerId => (100_000 + i).to_string(),
            EmployeeId => (100_000 + 2 * i).to_string(),
            ProductId => (100_000 + 3 * i).to_string(),
            PersonName => {
                let (f, l) = name(i);
                format!("{f} {l}")
            }
            Email => {
                let (f, l) = name(i);
                format!("{}.{}@example.com", f.to_lowercase(), l.to_lowercase())
            }
            City => CITIES[i].to_owned(),
            Country => COUNTRIES[i].to_owned(),
            Address => {
                let street = STREETS[i % STREETS.len()];
                let suffix = SUFFIXES[(i / STREETS.len()) % SUFFIXES.len()];
                format!("{} {street} {suffix}", 10 + (i * 37) % 990)
            }
            OrderDate => iso_date(2023, i),
            HireDate => iso_date(2012, i),
            BirthDate => iso_date(1955, i * 5),
            Price => dollars(499 + i * 1_997 % 150_000),
            Salary => dollars(3_000_000 + i * 1_234_567 % 9_000_000),
            Age => (18 + i).to_string(),
            Quantity => (1 + i).to_string(),
            Rating => format!("{:.1}", 1.0 + i as f64 * 0.1),
            ProductCode => format!("SKU-{:04}", 1000 + i * 7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Style {
    Plain,
    /// Every value rendered in its alternative format.
    Variant,
    /// A keyboard typo in roughly this fraction of the values.
    Typos(f64),
}

struct ColumnSpec {
    name: &'static str,
    domain: Domain,
    style: Style,
}

const fn col(name: &'static str, domain: Domain, style: Style) -> ColumnSpec {
    ColumnSpec { name, domain, style }
}

struct TableSpec {
    id: &'static str,
    columns: &'static [ColumnSpec],
}

use Domain::*;
use Style::*;

const SCHEMAS: [TableSpec; 10] = [
    TableSpec {
        id: "customers",
        columns: &[
            col("customer_id", CustomerId, Plain),
            col("full_name", PersonName, Plain),
            col("email", Email, Plain),
            col("city", City, Plain),
            col("age", Age, Plain),
            col("birth_date", BirthDate, Plain),
        ],
    },
    TableSpec {
        id: "orders",
        columns: &[
            col("customer", CustomerId, Plain),
            col("product_id", ProductId, Plain),
            col("quantity", Quantity, Plain),
            col("order_date", OrderDate, Plain),
            col("total", Price, Plain),
        ],
    },
    TableSpec {
        id: "products",
        columns: &[
            col("id", ProductId, Plain),
            col("code", ProductCode, Plain),
            col("list_price", Price, Variant),
            col("avg_rating", Rating, Plain),
            col("in_stock", Quantity, Plain),
        ],
    },
    TableSpec {
        id: "stores",
        columns: &[
            col("store_city", City, Typos(0.3)),
            col("street_address", Address, Plain),
            col("country", Country, Plain),
            col("opened", HireDate, Plain),
        ],
    },
    TableSpec {
        id: "employees",
        columns: &[
            col("employee", PersonName, Typos(0.25)),
            col("employee_no", EmployeeId, Plain),
            col("hired_on", HireDate, Variant),
            col("salary", Salary, Plain),
            col("age", Age, Plain),
            col("office", City, Plain),
        ],
    },
    TableSpec {
        id: "shipments",
        columns: &[
            col("item", ProductCode, Plain),
            col("shipped", OrderDate, Plain),
            col("destination", Country, Plain),
            col("deliver_to", Address, Variant),
            col("units", Quantity, Plain),
        ],
    },
    TableSpec {
        id: "reviews",
        columns: &[
            col("reviewer_id", CustomerId, Plain),
            col("product", ProductCode, Typos(0.2)),
            col("stars", Rating, Plain),
            col("posted", OrderDate, Variant),
        ],
    },
    TableSpec {
        id: "travel",
        columns: &[
            col("traveler", PersonName, Plain),
            col("origin", City, Plain),
            col("destination_country", Country, Typos(0.3)),
            col("departure", OrderDate, Plain),
            col("traveler_age", Age, Plain),
        ],
    },
    TableSpec {
        id: "suppliers",
        columns: &[
            col("supplier_country", Country, Plain),
            col("contact", Email, Typos(0.2)),
            col("warehouse", Address, Plain),
            col("lead_days", Quantity, Plain),
            col("since", HireDate, Plain),
        ],
    },
    TableSpec {
        id: "payroll",
        columns: &[
            col("staff_name", PersonName, Plain),
            col("gross", Salary, Variant),
            col("paid_on", HireDate, Plain),
            col("dob", BirthDate, Variant),
            col("staff_no", EmployeeId, Plain),
        ],
    },
];

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub repository: Repository,
    pub truth: GroundTruth,
}

impl Benchmark {
    /// Writes `tables/<id>.csv` and `truth.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.repository.write_dir(&dir.join("tables"))?;
        self.truth.write(&dir.join("truth.csv"), &self.repository)
    }
}

fn render(value: String, style: Style, rng: &mut ChaCha8Rng) -> (String, bool) {
    match style {
        Plain => (value, false),
        Variant => match format_variant(&value) {
            Some(v) => (v, true),
            None => (value, false),
        },
        Typos(p) => {
            if rng.gen_bool(p) {
                (keyboard_typo(&value, rng), true)
            } else {
                (value, false)
            }
        }
    }
}

/// Builds the ten-table benchmark. Each column samples its canonical values
/// from a random window of its domain, so same-domain columns overlap to
/// varying degrees. A pair is a true join when both columns share a domain
/// and at least one canonical value; it is fuzzy when either side was
/// rendered with typos or an alternative format.
pub fn generate_benchmark(seed: u64) -> Result<Benchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = Vec::new();
    // per node: domain, canonical value set, whether any value was altered
    let mut meta: Vec<(Domain, BTreeSet<usize>, bool)> = Vec::new();
    for spec in &SCHEMAS {
        let n_rows = rng.gen_range(60..=120);
        let mut columns: Vec<Vec<String>> = Vec::new();
        for c in spec.columns {
            let pool = c.domain.pool_size();
            let width = ((pool as f64 * rng.gen_range(0.35..0.8)).ceil() as usize).clamp(1, pool);
            let start = rng.gen_range(0..=pool - width);
            let mut canon = BTreeSet::new();
            let mut altered = false;
            let mut cells = Vec::with_capacity(n_rows);
            for _ in 0..n_rows {
                let i = start + rng.gen_range(0..width);
                canon.insert(i);
                let (v, changed) = render(c.domain.canonical(i), c.style, &mut rng);
                altered |= changed;
                cells.push(v);
            }
            // a few blanks, as in real exports
            for _ in 0..rng.gen_range(0..3) {
                let r = rng.gen_range(0..n_rows);
                cells[r].clear();
            }
            meta.push((c.domain, canon, altered));
            columns.push(cells);
        }
        let mut rows: Vec<Vec<String>> = (0..n_rows)
            .map(|r| columns.iter().map(|col| col[r].clone()).collect())
            .collect();
        rows.shuffle(&mut rng);
        let names = spec.columns.iter().map(|c| c.name.to_owned()).collect();
        tables.push(Table::new(spec.id, names, rows)?);
    }
    let repository = Repository::from_tables(tables);
    let mut truth = GroundTruth::default();
    for (a, b) in repository.cross_table_pairs() {
        let (ma, mb) = (&meta[a], &meta[b]);
        if ma.0 == mb.0 && ma.1.intersection(&mb.1).next().is_some() {
            let kind = if ma.2 || mb.2 { JoinKind::Fuzzy } else { JoinKind::Equi };
            truth.insert(a, b, Some(kind));
        }
    }
    Ok(Benchmark { repository, truth })
}
