//! Source-level checks that the post-processing chain (encode, split,
//! aggregate, decode) only ever sees what `perturb_gradient` released.

const PRIVACY: &str = include_str!("../src/privacy.rs");
const CLIENT: &str = include_str!("../src/protocol/client.rs");
const SERVER: &str = include_str!("../src/protocol/server.rs");
const PARAMETER_SERVER: &str = include_str!("../src/protocol/parameter_server.rs");
const MESSAGE: &str = include_str!("../src/protocol/message.rs");
const SHARING: &str = include_str!("../src/sharing.rs");

const RAW_DATA: [&str; 6] = ["per_sample_gradient", "mean_gradient", "Dataset", ".features", ".labels", "clip_l1"];

fn non_test(src: &str) -> &str {
    src.split("#[cfg(test)]").next().unwrap()
}

fn squash(src: &str) -> String {
    src.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Text of `fn name` in `src`, up to the next function definition.
fn fn_body<'a>(src: &'a str, name: &str) -> &'a str {
    let start = [format!("fn {name}("), format!("fn {name}<")]
        .iter()
        .filter_map(|p| src.find(p.as_str()))
        .min()
        .unwrap_or_else(|| panic!("fn {name} not found"));
    let rest = &src[start..];
    let end = ["\n    fn ", "\n    pub fn ", "\nfn ", "\npub fn ", "\npub(crate) fn ", "\n    pub(crate) fn "]
        .iter()
        .filter_map(|p| rest[1..].find(p).map(|i| i + 1))
        .min()
        .unwrap_or(rest.len());
    &rest[..end]
}

#[test]
fn released_values_are_only_minted_by_perturb_gradient() {
    let src = non_test(PRIVACY);
    let def = src.find("pub struct Released {").unwrap();
    let open = def + src[def..].find('{').unwrap() + 1;
    let fields = &src[open..open + src[open..].find('}').unwrap()];
    assert!(!fields.contains("pub "), "Released must not expose public fields");
    let body = fn_body(src, "perturb_gradient");
    let outside = src.replace(body, "");
    let literals = outside.matches("Released {").count()
        - outside.matches("struct Released {").count()
        - outside.matches("impl Released {").count();
    assert_eq!(literals, 0, "Released built outside perturb_gradient");
    assert!(body.matches("Released {").count() >= 1);
}

#[test]
fn client_uploads_are_built_from_the_release_only() {
    let src = non_test(CLIENT);
    let uploads = fn_body(src, "uploads");
    assert!(uploads.contains("released: &Released"));
    for raw in RAW_DATA.iter().chain(&["self.data", "self.rows", "sum"]) {
        assert!(!uploads.contains(raw), "uploads touches {raw}");
    }
    let release = fn_body(src, "release");
    assert_eq!(release.matches("perturb_gradient(").count(), 2, "both branches end in perturb_gradient");
    let round = fn_body(src, "client_round");
    assert!(round.contains("let released = state.release("));
    assert!(round.contains("state.uploads(&released"));
}

#[test]
fn servers_never_touch_training_data() {
    for (name, src) in [
        ("server", SERVER),
        ("parameter_server", PARAMETER_SERVER),
        ("message", MESSAGE),
        ("sharing", SHARING),
    ] {
        for raw in RAW_DATA {
            assert!(!non_test(src).contains(raw), "{name} references {raw}");
        }
    }
}

#[test]
fn parameter_server_never_accepts_individual_shares() {
    let src = non_test(PARAMETER_SERVER);
    let accept = fn_body(src, "accept");
    assert!(!accept.contains("ShareUpload"), "no arm may take an individual share");
    let flat = squash(accept);
    assert!(flat.contains("true, RoundMessage::PartialSum {"), "sharing mode takes partial sums");
    assert!(flat.contains("false, RoundMessage::PlainGradientUpload {"));
    assert!(accept.contains("(_, other) => Err("), "everything else is refused");
    let rebuild = fn_body(src, "reconstruct_aggregate");
    assert!(rebuild.contains("std::mem::take(&mut self.partials)"));
    assert!(rebuild.contains("AGGREGATED_CLIENT"));
}
