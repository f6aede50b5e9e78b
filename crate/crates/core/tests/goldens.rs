//! Frozen outputs for a hand-built three-agent intersection scene.
//!
//! Set `MOTION_CONTEXT_BLESS=1` to rewrite the files under `tests/golden/`
//! after an intended rendering or template change.

use std::path::PathBuf;

use motion_context::prompt::{build_tcgp, compose_prompt, detect_lane_type, PromptTemplate};
use motion_context::raster::{decode_png, encode_png};
use motion_context::render::{ego_view, render, RenderConfig};
use motion_context::scenario::{AgentState, AgentTrack, AgentType, Scenario, HISTORY_FRAMES};
use motion_context::synth::{intersection_map, synth_fixtures};

fn track(id: &str, t: AgentType, x: f64, y: f64, heading: f64, speed: f64) -> AgentTrack {
    let (c, s) = (heading.cos(), heading.sin());
    let history = (0..HISTORY_FRAMES)
        .map(|k| {
            let back = (HISTORY_FRAMES - 1 - k) as f64 * 0.1 * speed;
            AgentState::new(x - c * back, y - s * back, heading, speed * c, speed * s)
        })
        .collect();
    AgentTrack { agent_id: id.into(), agent_type: t, history, future: None }
}

fn three_agents() -> Scenario {
    Scenario {
        scenario_id: "golden-three-agents".into(),
        ego_agent_id: "ego".into(),
        agents: vec![
            track("ego", AgentType::Vehicle, -22.0, -5.25, 0.0, 8.0),
            track("car", AgentType::Vehicle, 5.25, -30.0, std::f64::consts::FRAC_PI_2, 6.0),
            track("walker", AgentType::Pedestrian, -11.5, 2.0, -std::f64::consts::FRAC_PI_2, 1.2),
        ],
        map: intersection_map(),
    }
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = golden(name);
    if std::env::var_os("MOTION_CONTEXT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the frozen copy");
}

#[test]
fn three_agent_image_matches_golden() {
    let img = render(&three_agents(), &RenderConfig::default()).unwrap();
    let png = encode_png(&img).unwrap();
    check_golden("three_agents.png", &png);
    assert_eq!(decode_png(&png).unwrap(), img);
    assert_eq!(encode_png(&render(&three_agents(), &RenderConfig::default()).unwrap()).unwrap(), png);
}

#[test]
fn three_agent_prompt_matches_golden() {
    let tcgp = build_tcgp(&three_agents(), &PromptTemplate::default(), &RenderConfig::default()).unwrap();
    check_golden("three_agents.txt", tcgp.text.as_bytes());
    assert_eq!(tcgp.neighbors.len(), 2);
}

#[test]
fn prompt_text_and_image_name_the_same_neighbors() {
    let cfg = RenderConfig::default();
    let tmpl = PromptTemplate::default();
    let no_labels = RenderConfig { draw_labels: false, ..cfg.clone() };
    for s in synth_fixtures(40, 21).unwrap() {
        let view = ego_view(&s, &cfg).unwrap();
        let drawn: Vec<String> = view.neighbors.iter().map(|n| n.label.unwrap().to_string()).collect();
        let p = compose_prompt(&s, &tmpl, &cfg).unwrap();
        for n in &p.neighbors {
            assert!(drawn.contains(&n.label), "{}: label {} is not drawn", s.scenario_id, n.label);
            assert!(p.text.contains(&format!("{}", n.label)));
        }
        if !view.neighbors.is_empty() {
            assert_ne!(render(&s, &cfg).unwrap(), render(&s, &no_labels).unwrap(), "{}: labels not visible", s.scenario_id);
        }
    }
}

#[test]
fn lane_sentence_follows_detected_lane() {
    let cfg = RenderConfig::default();
    let tmpl = PromptTemplate::default();
    for s in synth_fixtures(40, 22).unwrap() {
        let p = compose_prompt(&s, &tmpl, &cfg).unwrap();
        match detect_lane_type(&s.map, s.ego().current(), &tmpl.lane) {
            Ok(d) => {
                assert_eq!(p.lane.as_ref().unwrap().lane_type, d.lane_type);
                assert!(p.text.contains(d.lane_type.phrase()), "{}", s.scenario_id);
            }
            Err(_) => assert!(p.lane.is_none()),
        }
        assert_eq!(compose_prompt(&s, &tmpl, &cfg).unwrap().text, p.text);
    }
}
