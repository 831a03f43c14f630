use coexist::mediator::{Request, RequestBody};
use coexist::NetworkId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHANNELS: usize = 12;

/// Registrations, share reports (some negative), queries and selections (some
/// out of range), with a few requests from networks that never registered.
pub fn mixed_requests(count: usize, seed: u64) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<NetworkId> = (0..6).map(|i| NetworkId::from(format!("net{i}"))).collect();
    let mut requests: Vec<Request> = ids
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, id)| Request {
            seq: i as u64,
            network: id.clone(),
            body: RequestBody::Register,
        })
        .collect();
    while requests.len() < count {
        let network = ids[rng.gen_range(0..ids.len())].clone();
        let body = match rng.gen_range(0..10) {
            0 => RequestBody::Register,
            1..=3 => RequestBody::ReportShare {
                share: rng.gen_range(-1.0..20.0),
            },
            4..=5 => RequestBody::GetBeta,
            6..=7 => RequestBody::GetSelectivity,
            _ => RequestBody::Select {
                channel: rng.gen_range(0..CHANNELS + 2),
            },
        };
        requests.push(Request {
            seq: requests.len() as u64,
            network,
            body,
        });
    }
    requests
}
