//! Synthetic flow records for demos and tests.
//!
//! [`blobs_csv`] draws two Gaussian blobs in the unit square. [`kdd_like_csv`]
//! writes records in the 41-feature KDD Cup 1999 layout (no header, label
//! strings with a trailing dot) from hand-written per-class traffic
//! profiles. The class mix follows the deduplicated 10% KDD99 training file:
//! about 60% normal traffic, a third neptune SYN floods and a long tail of
//! rarer attacks. It is a stand-in with the same shape, not the real corpus.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};

use crate::dataset::FeatureSchema;

/// Schema for KDD Cup 1999 files: 41 features plus the `label` column.
pub fn kdd99_schema() -> FeatureSchema {
    FeatureSchema::from_json(include_str!("../schemas/kdd99.json")).expect("bundled schema is valid")
}

/// Schema for [`blobs_csv`]: numeric `x`, `y` and a `label` column.
pub fn blobs_schema() -> FeatureSchema {
    FeatureSchema::from_json(
        r#"{
            "columns": [
                {"name": "x", "kind": "numeric"},
                {"name": "y", "kind": "numeric"},
                {"name": "label", "kind": "ignored"}
            ],
            "label_column": "label",
            "normal_label": "normal",
            "has_header": true
        }"#,
    )
    .expect("blobs schema is valid")
}

/// `n` points, alternating between a normal blob at (0.3, 0.3) and an
/// attack blob at (0.7, 0.7), each with standard deviation `spread`.
pub fn blobs_csv(n: usize, spread: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).expect("valid spread");
    let mut out = String::from("x,y,label\n");
    for i in 0..n {
        let (center, label) = if i % 2 == 0 { (0.3, "normal") } else { (0.7, "attack") };
        let x = center + noise.sample(&mut rng);
        let y = center + noise.sample(&mut rng);
        writeln!(out, "{x},{y},{label}").unwrap();
    }
    out
}

/// One KDD99 connection record, in column order.
#[derive(Debug, Clone, Default)]
struct Flow {
    duration: u64,
    protocol: &'static str,
    service: &'static str,
    flag: &'static str,
    src_bytes: u64,
    dst_bytes: u64,
    land: u8,
    wrong_fragment: u8,
    urgent: u8,
    hot: u32,
    num_failed_logins: u8,
    logged_in: u8,
    num_compromised: u32,
    root_shell: u8,
    su_attempted: u8,
    num_root: u32,
    num_file_creations: u32,
    num_shells: u8,
    num_access_files: u8,
    is_host_login: u8,
    is_guest_login: u8,
    count: u32,
    srv_count: u32,
    serror_rate: f64,
    srv_serror_rate: f64,
    rerror_rate: f64,
    srv_rerror_rate: f64,
    same_srv_rate: f64,
    diff_srv_rate: f64,
    srv_diff_host_rate: f64,
    dst_host_count: u32,
    dst_host_srv_count: u32,
    dst_host_same_srv_rate: f64,
    dst_host_diff_srv_rate: f64,
    dst_host_same_src_port_rate: f64,
    dst_host_srv_diff_host_rate: f64,
    dst_host_serror_rate: f64,
    dst_host_srv_serror_rate: f64,
    dst_host_rerror_rate: f64,
    dst_host_srv_rerror_rate: f64,
}

impl Flow {
    fn write(&self, out: &mut String, label: &str) {
        let r = |v: f64| format!("{:.2}", v.clamp(0.0, 1.0));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},0,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.duration,
            self.protocol,
            self.service,
            self.flag,
            self.src_bytes,
            self.dst_bytes,
            self.land,
            self.wrong_fragment,
            self.urgent,
            self.hot,
            self.num_failed_logins,
            self.logged_in,
            self.num_compromised,
            self.root_shell,
            self.su_attempted,
            self.num_root,
            self.num_file_creations,
            self.num_shells,
            self.num_access_files,
            self.is_host_login,
            self.is_guest_login,
            self.count,
            self.srv_count,
            r(self.serror_rate),
            r(self.srv_serror_rate),
            r(self.rerror_rate),
            r(self.srv_rerror_rate),
            r(self.same_srv_rate),
            r(self.diff_srv_rate),
            r(self.srv_diff_host_rate),
            self.dst_host_count,
            self.dst_host_srv_count,
            r(self.dst_host_same_srv_rate),
            r(self.dst_host_diff_srv_rate),
            r(self.dst_host_same_src_port_rate),
            r(self.dst_host_srv_diff_host_rate),
            r(self.dst_host_serror_rate),
            r(self.dst_host_srv_serror_rate),
            r(self.dst_host_rerror_rate),
            r(self.dst_host_srv_rerror_rate),
            label
        )
        .unwrap();
    }
}

const TCP_SERVICES: [&str; 16] = [
    "http", "smtp", "ftp", "ftp_data", "telnet", "private", "finger", "auth", "domain", "pop_3",
    "imap4", "sunrpc", "whois", "uucp", "courier", "ctf",
];

/// Class weights, from the deduplicated 10% training file.
const CLASSES: [(&str, f64); 13] = [
    ("normal.", 87_832.0),
    ("neptune.", 51_820.0),
    ("smurf.", 3_007.0),
    ("back.", 968.0),
    ("teardrop.", 918.0),
    ("satan.", 906.0),
    ("warezclient.", 893.0),
    ("ipsweep.", 651.0),
    ("portsweep.", 416.0),
    ("pod.", 206.0),
    ("nmap.", 158.0),
    ("guess_passwd.", 53.0),
    ("buffer_overflow.", 30.0),
];

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn int(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.random_range(lo..=hi)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Log-normal around `median` with log-scale spread `sigma`.
    fn bytes(&mut self, median: f64, sigma: f64) -> u64 {
        LogNormal::new(median.ln(), sigma)
            .expect("valid log-normal")
            .sample(&mut self.rng)
            .round() as u64
    }

    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.rng.random_range(0..items.len())]
    }

    /// A small-valued rate: usually 0, occasionally some noise.
    fn noisy_zero(&mut self, p: f64) -> f64 {
        if self.chance(p) {
            self.uniform(0.01, 0.3)
        } else {
            0.0
        }
    }

    fn host_counts(&mut self, f: &mut Flow) {
        f.dst_host_count = self.int(1, 255) as u32;
        f.dst_host_srv_count = if self.chance(0.6) { 255 } else { self.int(1, 255) as u32 };
        f.dst_host_same_srv_rate = if self.chance(0.7) { 1.0 } else { self.uniform(0.1, 1.0) };
        f.dst_host_diff_srv_rate = self.noisy_zero(0.3);
        f.dst_host_same_src_port_rate = self.uniform(0.0, 0.1);
        f.dst_host_srv_diff_host_rate = self.noisy_zero(0.3);
    }

    fn normal(&mut self) -> Flow {
        let mut f = Flow {
            flag: "SF",
            count: self.int(1, 20) as u32,
            same_srv_rate: 1.0,
            ..Flow::default()
        };
        f.srv_count = f.count + self.int(0, 20) as u32;
        self.host_counts(&mut f);
        let kind = self.unit();
        if kind < 0.60 {
            f.protocol = "tcp";
            f.service = "http";
            f.src_bytes = self.bytes(250.0, 0.5);
            f.dst_bytes = self.bytes(3000.0, 1.0);
            f.logged_in = 1;
        } else if kind < 0.72 {
            f.protocol = "tcp";
            f.service = "smtp";
            f.src_bytes = self.bytes(1000.0, 0.6);
            f.dst_bytes = self.bytes(330.0, 0.3);
            f.logged_in = 1;
            f.duration = self.int(0, 3);
        } else if kind < 0.80 {
            f.protocol = "tcp";
            f.service = "ftp_data";
            f.src_bytes = self.bytes(2000.0, 1.5);
            f.logged_in = 1;
            f.dst_host_count = self.int(1, 60) as u32;
        } else if kind < 0.90 {
            f.protocol = "udp";
            f.service = "domain_u";
            f.src_bytes = self.int(28, 50);
            f.dst_bytes = self.int(80, 150);
            f.count = self.int(1, 150) as u32;
            f.srv_count = f.count;
        } else if kind < 0.94 {
            f.protocol = "udp";
            f.service = "private";
            f.src_bytes = self.int(100, 150);
            f.dst_bytes = self.int(100, 150);
        } else if kind < 0.97 {
            f.protocol = "icmp";
            f.service = self.pick(&["eco_i", "ecr_i"]);
            f.src_bytes = self.pick(&[8, 20, 64, 520, 1032]);
            f.count = self.int(1, 3) as u32;
            f.srv_count = f.count;
        } else {
            f.protocol = "tcp";
            f.service = self.pick(&["telnet", "ftp", "finger", "auth", "pop_3"]);
            f.src_bytes = self.bytes(300.0, 1.0);
            f.dst_bytes = self.bytes(1500.0, 1.2);
            f.duration = self.bytes(20.0, 2.0);
            f.logged_in = u8::from(self.chance(0.8));
            if self.chance(0.2) {
                f.flag = self.pick(&["REJ", "RSTO", "S1"]);
                f.rerror_rate = self.uniform(0.0, 0.5);
                f.srv_rerror_rate = f.rerror_rate;
            }
            if f.service == "telnet" && self.chance(0.3) {
                f.hot = self.int(0, 2) as u32;
                f.num_file_creations = self.int(0, 1) as u32;
            }
        }
        f.serror_rate = self.noisy_zero(0.05);
        f.srv_serror_rate = f.serror_rate;
        f.dst_host_serror_rate = self.noisy_zero(0.1);
        f.dst_host_rerror_rate = self.noisy_zero(0.1);
        f
    }

    fn neptune(&mut self) -> Flow {
        let rej = self.chance(0.1);
        let count = self.int(100, 511) as u32;
        let srv = self.int(1, 30) as u32;
        let (serror, rerror) = if rej { (0.0, 1.0) } else { (1.0, 0.0) };
        Flow {
            protocol: "tcp",
            service: if self.chance(0.4) { "private" } else { self.pick(&TCP_SERVICES) },
            flag: if rej { "REJ" } else { "S0" },
            count,
            srv_count: srv,
            serror_rate: serror,
            srv_serror_rate: serror,
            rerror_rate: rerror,
            srv_rerror_rate: rerror,
            same_srv_rate: self.uniform(0.0, 0.1),
            diff_srv_rate: self.uniform(0.05, 0.1),
            dst_host_count: 255,
            dst_host_srv_count: self.int(1, 30) as u32,
            dst_host_same_srv_rate: self.uniform(0.0, 0.1),
            dst_host_diff_srv_rate: self.uniform(0.05, 0.1),
            dst_host_serror_rate: serror,
            dst_host_srv_serror_rate: serror,
            dst_host_rerror_rate: rerror,
            dst_host_srv_rerror_rate: rerror,
            ..Flow::default()
        }
    }

    fn smurf(&mut self) -> Flow {
        let count = self.int(300, 511) as u32;
        Flow {
            protocol: "icmp",
            service: "ecr_i",
            flag: "SF",
            src_bytes: if self.chance(0.8) { 1032 } else { 520 },
            count,
            srv_count: count,
            same_srv_rate: 1.0,
            dst_host_count: 255,
            dst_host_srv_count: 255,
            dst_host_same_srv_rate: 1.0,
            dst_host_same_src_port_rate: 1.0,
            ..Flow::default()
        }
    }

    fn back(&mut self) -> Flow {
        let mut f = Flow {
            protocol: "tcp",
            service: "http",
            flag: if self.chance(0.8) { "SF" } else { "RSTR" },
            src_bytes: 54_540 + self.int(0, 2000),
            dst_bytes: if self.chance(0.7) { 8314 } else { self.int(0, 8314) },
            hot: 2,
            logged_in: 1,
            num_compromised: 1,
            count: self.int(1, 10) as u32,
            same_srv_rate: 1.0,
            ..Flow::default()
        };
        f.srv_count = f.count;
        self.host_counts(&mut f);
        f
    }

    fn teardrop(&mut self) -> Flow {
        let count = self.int(1, 100) as u32;
        Flow {
            protocol: "udp",
            service: "private",
            flag: "SF",
            src_bytes: 28,
            wrong_fragment: 3,
            count,
            srv_count: count,
            same_srv_rate: 1.0,
            dst_host_count: self.int(1, 255) as u32,
            dst_host_srv_count: self.int(1, 100) as u32,
            dst_host_same_srv_rate: self.uniform(0.3, 1.0),
            ..Flow::default()
        }
    }

    fn satan(&mut self) -> Flow {
        let flag = self.pick(&["REJ", "S0", "RSTO", "SF", "RSTR"]);
        let rerror = if flag == "S0" { 0.0 } else { self.uniform(0.5, 1.0) };
        let serror = if flag == "S0" { self.uniform(0.5, 1.0) } else { 0.0 };
        Flow {
            protocol: "tcp",
            service: self.pick(&TCP_SERVICES),
            flag,
            src_bytes: self.int(0, 20),
            count: self.int(1, 500) as u32,
            srv_count: self.int(1, 10) as u32,
            serror_rate: serror,
            rerror_rate: rerror,
            srv_rerror_rate: rerror,
            same_srv_rate: self.uniform(0.0, 0.3),
            diff_srv_rate: self.uniform(0.5, 1.0),
            dst_host_count: self.int(1, 255) as u32,
            dst_host_srv_count: self.int(1, 20) as u32,
            dst_host_same_srv_rate: self.uniform(0.0, 0.2),
            dst_host_diff_srv_rate: self.uniform(0.3, 1.0),
            dst_host_rerror_rate: rerror,
            dst_host_serror_rate: serror,
            ..Flow::default()
        }
    }

    fn warezclient(&mut self) -> Flow {
        let ftp = self.chance(0.3);
        let mut f = Flow {
            protocol: "tcp",
            service: if ftp { "ftp" } else { "ftp_data" },
            flag: "SF",
            duration: self.bytes(50.0, 2.0),
            src_bytes: self.bytes(30_000.0, 1.0),
            dst_bytes: if ftp { self.bytes(2000.0, 1.0) } else { 0 },
            hot: self.int(0, 28) as u32,
            logged_in: 1,
            is_guest_login: u8::from(ftp),
            count: self.int(1, 5) as u32,
            same_srv_rate: 1.0,
            ..Flow::default()
        };
        f.srv_count = f.count;
        self.host_counts(&mut f);
        f.dst_host_count = self.int(1, 20) as u32;
        f
    }

    fn ipsweep(&mut self) -> Flow {
        Flow {
            protocol: "icmp",
            service: "eco_i",
            flag: "SF",
            src_bytes: self.int(8, 18),
            count: self.int(1, 2) as u32,
            srv_count: self.int(1, 40) as u32,
            same_srv_rate: 1.0,
            srv_diff_host_rate: self.uniform(0.5, 1.0),
            dst_host_count: self.int(1, 100) as u32,
            dst_host_srv_count: self.int(1, 100) as u32,
            dst_host_same_srv_rate: self.uniform(0.5, 1.0),
            dst_host_diff_srv_rate: self.uniform(0.0, 0.5),
            dst_host_same_src_port_rate: 1.0,
            dst_host_srv_diff_host_rate: self.uniform(0.3, 1.0),
            ..Flow::default()
        }
    }

    fn portsweep(&mut self) -> Flow {
        Flow {
            protocol: "tcp",
            service: if self.chance(0.7) { "private" } else { self.pick(&TCP_SERVICES) },
            flag: self.pick(&["REJ", "RSTR", "RSTOS0"]),
            duration: if self.chance(0.2) { self.int(1, 40_000) } else { 0 },
            count: self.int(1, 5) as u32,
            srv_count: self.int(1, 5) as u32,
            rerror_rate: self.uniform(0.5, 1.0),
            srv_rerror_rate: 1.0,
            same_srv_rate: 1.0,
            srv_diff_host_rate: self.uniform(0.0, 1.0),
            dst_host_count: self.int(1, 255) as u32,
            dst_host_srv_count: self.int(1, 10) as u32,
            dst_host_same_srv_rate: self.uniform(0.0, 0.3),
            dst_host_diff_srv_rate: self.uniform(0.0, 0.3),
            dst_host_same_src_port_rate: self.uniform(0.5, 1.0),
            dst_host_srv_diff_host_rate: self.uniform(0.0, 0.5),
            dst_host_rerror_rate: self.uniform(0.3, 1.0),
            dst_host_srv_rerror_rate: 1.0,
            ..Flow::default()
        }
    }

    fn pod(&mut self) -> Flow {
        let count = self.int(1, 20) as u32;
        Flow {
            protocol: "icmp",
            service: "ecr_i",
            flag: "SF",
            src_bytes: 1480,
            wrong_fragment: 1,
            count,
            srv_count: count,
            same_srv_rate: 1.0,
            dst_host_count: self.int(1, 255) as u32,
            dst_host_srv_count: self.int(1, 255) as u32,
            dst_host_same_srv_rate: 1.0,
            dst_host_same_src_port_rate: self.uniform(0.0, 1.0),
            ..Flow::default()
        }
    }

    fn nmap(&mut self) -> Flow {
        let (protocol, service, flag) = self.pick(&[
            ("icmp", "eco_i", "SF"),
            ("tcp", "private", "SH"),
            ("tcp", "private", "S0"),
            ("udp", "private", "SF"),
        ]);
        Flow {
            protocol,
            service,
            flag,
            src_bytes: self.int(0, 20),
            count: self.int(1, 3) as u32,
            srv_count: self.int(1, 3) as u32,
            same_srv_rate: 1.0,
            dst_host_count: self.int(1, 255) as u32,
            dst_host_srv_count: self.int(1, 10) as u32,
            dst_host_same_srv_rate: self.uniform(0.0, 1.0),
            dst_host_diff_srv_rate: self.uniform(0.0, 0.6),
            dst_host_same_src_port_rate: self.uniform(0.5, 1.0),
            dst_host_srv_diff_host_rate: self.uniform(0.0, 1.0),
            ..Flow::default()
        }
    }

    fn guess_passwd(&mut self) -> Flow {
        let mut f = Flow {
            protocol: "tcp",
            service: "telnet",
            flag: if self.chance(0.7) { "RSTO" } else { "SF" },
            duration: self.int(1, 5),
            src_bytes: 125,
            dst_bytes: 179,
            num_failed_logins: 1,
            count: 1,
            srv_count: 1,
            same_srv_rate: 1.0,
            ..Flow::default()
        };
        self.host_counts(&mut f);
        f.rerror_rate = if f.flag == "RSTO" { 1.0 } else { 0.0 };
        f
    }

    fn buffer_overflow(&mut self) -> Flow {
        let mut f = Flow {
            protocol: "tcp",
            service: "telnet",
            flag: "SF",
            duration: self.int(100, 300),
            src_bytes: self.int(1000, 3000),
            dst_bytes: self.int(2000, 10_000),
            hot: self.int(1, 3) as u32,
            logged_in: 1,
            root_shell: 1,
            num_file_creations: self.int(0, 1) as u32,
            count: 1,
            srv_count: 1,
            same_srv_rate: 1.0,
            ..Flow::default()
        };
        self.host_counts(&mut f);
        f
    }
}

/// `n` KDD99-layout records without a header. Deterministic per seed.
pub fn kdd_like_csv(n: usize, seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let weights = WeightedIndex::new(CLASSES.iter().map(|(_, w)| *w)).expect("positive weights");
    let mut out = String::with_capacity(n * 160);
    for _ in 0..n {
        let (label, _) = CLASSES[weights.sample(&mut g.rng)];
        let flow = match label {
            "normal." => g.normal(),
            "neptune." => g.neptune(),
            "smurf." => g.smurf(),
            "back." => g.back(),
            "teardrop." => g.teardrop(),
            "satan." => g.satan(),
            "warezclient." => g.warezclient(),
            "ipsweep." => g.ipsweep(),
            "portsweep." => g.portsweep(),
            "pod." => g.pod(),
            "nmap." => g.nmap(),
            "guess_passwd." => g.guess_passwd(),
            _ => g.buffer_overflow(),
        };
        flow.write(&mut out, label);
    }
    out
}
