use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use super::{FabricError, LinkParams};
use crate::topology::{ChangeKind, LinkUpdate, MachineId};

/// Machine to IPv4 address map.
pub type Addressing = BTreeMap<MachineId, Ipv4Addr>;

/// `count` consecutive addresses starting at `base`.
pub fn sequential_addressing(count: usize, base: Ipv4Addr) -> Addressing {
    let start = u32::from(base);
    (0..count as u32)
        .map(|i| (MachineId(i), Ipv4Addr::from(start.wrapping_add(i))))
        .collect()
}

fn loss_percent(ppm: u32) -> String {
    let (whole, frac) = (ppm / 10_000, ppm % 10_000);
    if frac == 0 {
        whole.to_string()
    } else {
        let digits = format!("{frac:04}");
        format!("{whole}.{}", digits.trim_end_matches('0'))
    }
}

/// Configuration commands one host must run to apply `updates`.
///
/// Only updates touching `host` are emitted; the other endpoint is the
/// destination. The traffic-control class minor of a destination is two plus
/// its rank in `addressing`, so minors stay stable from plan to plan.
pub fn emit_plan(
    updates: &[LinkUpdate],
    host: MachineId,
    device: &str,
    addressing: &Addressing,
) -> Result<String, FabricError> {
    if !addressing.contains_key(&host) {
        return Err(FabricError::MissingAddress(host));
    }
    let minors: BTreeMap<MachineId, usize> = addressing.keys().enumerate().map(|(rank, m)| (*m, rank + 2)).collect();

    let mut rows: Vec<(MachineId, Option<LinkParams>)> = Vec::new();
    for u in updates {
        for m in [u.a, u.b] {
            if !addressing.contains_key(&m) {
                return Err(FabricError::MissingAddress(m));
            }
        }
        let dest = if u.a == host {
            u.b
        } else if u.b == host {
            u.a
        } else {
            continue;
        };
        let params = match u.kind {
            ChangeKind::Removed => None,
            ChangeKind::Created | ChangeKind::Modified => LinkParams::from_mesh(u.link),
        };
        rows.push((dest, params));
    }
    rows.sort_by_key(|(dest, _)| *dest);

    let mut netem = String::from("## netem-plan\n");
    let mut edt = String::from("## edt-plan\n");
    for (dest, params) in rows {
        let minor = minors[&dest];
        let ip = addressing[&dest];
        match params {
            Some(p) => {
                let rate = p.rate_kbps().unwrap_or(u64::MAX);
                let _ = writeln!(
                    netem,
                    "tc qdisc replace dev {device} parent 1:{minor} handle {minor}0: netem delay {}us rate {rate}kbit loss {}%",
                    p.delay_us(),
                    loss_percent(p.loss_ppm())
                );
                let _ = writeln!(
                    edt,
                    "SET {ip} delay_us={} rate_kbps={rate} loss_ppm={}",
                    p.delay_us(),
                    p.loss_ppm()
                );
            }
            None => {
                let _ = writeln!(netem, "tc qdisc del dev {device} parent 1:{minor} handle {minor}0:");
                let _ = writeln!(edt, "DEL {ip}");
            }
        }
    }
    netem.push_str(&edt);
    Ok(netem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::MeshLink;

    fn addr(n: usize) -> Addressing {
        sequential_addressing(n, Ipv4Addr::new(10, 0, 0, 1))
    }

    #[test]
    fn empty_plan_has_headers_only() {
        let plan = emit_plan(&[], MachineId(0), "eth0", &addr(2)).unwrap();
        assert_eq!(plan, "## netem-plan\n## edt-plan\n");
    }

    #[test]
    fn one_modified_link() {
        let u = LinkUpdate {
            a: MachineId(0),
            b: MachineId(1),
            kind: ChangeKind::Modified,
            link: MeshLink::Reachable {
                latency_us: 10_000,
                bandwidth_kbps: 50_000,
            },
        };
        let plan = emit_plan(&[u], MachineId(0), "eth0", &addr(2)).unwrap();
        assert_eq!(
            plan,
            "## netem-plan\n\
             tc qdisc replace dev eth0 parent 1:3 handle 30: netem delay 10000us rate 50000kbit loss 0%\n\
             ## edt-plan\n\
             SET 10.0.0.2 delay_us=10000 rate_kbps=50000 loss_ppm=0\n"
        );
        // seen from the other endpoint
        let plan = emit_plan(&[u], MachineId(1), "eth0", &addr(2)).unwrap();
        assert!(plan.contains("parent 1:2 handle 20:"));
        assert!(plan.contains("SET 10.0.0.1 "));
        // unrelated host
        let plan = emit_plan(&[u], MachineId(2), "eth0", &addr(3)).unwrap();
        assert_eq!(plan, "## netem-plan\n## edt-plan\n");
    }

    #[test]
    fn removal_and_missing_address() {
        let u = LinkUpdate {
            a: MachineId(0),
            b: MachineId(2),
            kind: ChangeKind::Removed,
            link: MeshLink::Unreachable,
        };
        let plan = emit_plan(&[u], MachineId(2), "veth", &addr(3)).unwrap();
        assert_eq!(
            plan,
            "## netem-plan\ntc qdisc del dev veth parent 1:2 handle 20:\n## edt-plan\nDEL 10.0.0.1\n"
        );
        assert_eq!(
            emit_plan(&[u], MachineId(0), "veth", &addr(2)),
            Err(FabricError::MissingAddress(MachineId(2)))
        );
    }

    #[test]
    fn loss_formatting() {
        assert_eq!(loss_percent(0), "0");
        assert_eq!(loss_percent(10_000), "1");
        assert_eq!(loss_percent(12_345), "1.2345");
        assert_eq!(loss_percent(500), "0.05");
        assert_eq!(loss_percent(1_000_000), "100");
    }
}
