use std::sync::Arc;

use super::obs::{channel, VIEW};
use super::*;

fn spec_from(text: &str, roster: Vec<AgentEntry>, objects: [usize; 2]) -> EnvSpec {
    let config = EnvConfig {
        roster,
        objects_per_type: objects,
        horizon: 10,
        ..EnvConfig::default()
    };
    EnvSpec::new(load_map(text).unwrap(), &config).unwrap()
}

fn open_5x5() -> EnvSpec {
    spec_from(
        "B....\n.....\n..b..\n.....\n....B\n",
        vec![AgentEntry::of(AgentType::A), AgentEntry::of(AgentType::B)],
        [0, 0],
    )
}

#[test]
fn reset_is_deterministic_and_places_agents_on_start_cells() {
    let spec = EnvSpec::new(default_map(), &EnvConfig::default()).unwrap();
    let a = EnvState::reset(&spec, 7).unwrap();
    let b = EnvState::reset(&spec, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.objects, EnvState::reset(&spec, 8).unwrap().objects);
    assert_eq!(a.object_count(ObjectKind::Star), 20);
    assert_eq!(a.object_count(ObjectKind::Triangle), 20);
    let starts = spec.map.start_cells();
    let distinct: std::collections::HashSet<_> = a.agents.iter().collect();
    assert_eq!(distinct.len(), a.agents.len());
    assert!(a.agents.iter().all(|p| starts.contains(p)));
    assert_eq!(a.agents, starts[..8].to_vec());
}

#[test]
fn reset_fails_without_enough_spawn_cells() {
    let spec = spec_from("B..\n.g.\n...\n", vec![AgentEntry::of(AgentType::A)], [2, 0]);
    assert!(matches!(EnvState::reset(&spec, 0), Err(Error::Setup(_))));
}

#[test]
fn lone_agent_moves_right() {
    let spec = spec_from("B....\n..g..\n", vec![AgentEntry::of(AgentType::A)], [0, 0]);
    let mut state = EnvState::staged(vec![Pos::new(0, 0)], vec![], 0);
    let tr = transition(&spec, &mut state, &[Action::Right]).unwrap();
    assert_eq!(state.agents, vec![Pos::new(1, 0)]);
    assert_eq!(tr.rewards, vec![0.0]);
    assert_eq!(tr.collisions, vec![None]);
}

#[test]
fn moving_into_wall_or_boundary_is_penalised() {
    let spec = spec_from("B#...\n..g..\n", vec![AgentEntry::of(AgentType::A)], [0, 0]);
    let mut env = Env::new(Arc::new(spec), vec![], 0).unwrap();
    let r = env.step(&[Action::Right]).unwrap();
    assert_eq!(env.state().agents, vec![Pos::new(0, 0)]);
    assert_eq!(r.rewards, vec![-1.0]);
    assert_eq!(r.info.wall_collisions, 1);
    let r = env.step(&[Action::Up]).unwrap();
    assert_eq!(r.rewards, vec![-1.0]);
    assert_eq!(r.info.wall_collisions, 1);
    assert_eq!(r.info.agent_collisions, 0);
}

#[test]
fn type_b_collects_triangle_in_delta_and_it_respawns() {
    let text = "B....\n...r.\n.....\n.....\n.....\n";
    let spec = spec_from(text, vec![AgentEntry::of(AgentType::B)], [0, 1]);
    let objects = vec![Object {
        kind: ObjectKind::Triangle,
        pos: Pos::new(3, 1),
    }];
    let mut state = EnvState::staged(vec![Pos::new(3, 0)], objects, 3);
    assert_eq!(spec.map.region(Pos::new(3, 1)), Region::Delta);
    let tr = transition(&spec, &mut state, &[Action::Down]).unwrap();
    assert_eq!(tr.rewards, vec![1.0]);
    assert_eq!(tr.collected, vec![true]);
    assert_eq!(state.object_count(ObjectKind::Triangle), 1);
    // The only spawn cell is occupied by the agent, so the object stays put.
    assert_eq!(state.objects[0].pos, Pos::new(3, 1));
}

#[test]
fn respawn_lands_on_a_free_spawn_cell() {
    let text = "B....\n...rr\n...rr\n.....\n.....\n";
    let spec = spec_from(text, vec![AgentEntry::of(AgentType::B)], [0, 1]);
    for seed in 0..20 {
        let objects = vec![Object {
            kind: ObjectKind::Triangle,
            pos: Pos::new(3, 1),
        }];
        let mut state = EnvState::staged(vec![Pos::new(3, 0)], objects, seed);
        transition(&spec, &mut state, &[Action::Down]).unwrap();
        let p = state.objects[0].pos;
        assert_ne!(p, Pos::new(3, 1));
        assert!(spec.map.spawn_cells(ObjectKind::Triangle).contains(&p));
    }
}

#[test]
fn unassigned_object_is_left_in_place() {
    let text = "B....\n...r.\n.....\n.....\n.....\n";
    let spec = spec_from(text, vec![AgentEntry::of(AgentType::A)], [0, 1]);
    let objects = vec![Object {
        kind: ObjectKind::Triangle,
        pos: Pos::new(3, 1),
    }];
    let mut state = EnvState::staged(vec![Pos::new(3, 0)], objects.clone(), 0);
    let tr = transition(&spec, &mut state, &[Action::Down]).unwrap();
    assert_eq!(tr.rewards, vec![0.0]);
    assert_eq!(state.objects, objects);
    assert_eq!(state.agents[0], Pos::new(3, 1));
}

#[test]
fn shared_target_and_swap_both_fail() {
    let spec = open_5x5();
    let mut state = EnvState::staged(vec![Pos::new(1, 2), Pos::new(3, 2)], vec![], 0);
    let tr = transition(&spec, &mut state, &[Action::Right, Action::Left]).unwrap();
    assert_eq!(state.agents, vec![Pos::new(1, 2), Pos::new(3, 2)]);
    assert_eq!(tr.rewards, vec![-1.0, -1.0]);
    assert_eq!(tr.collisions, vec![Some(Collision::Agent); 2]);

    let mut state = EnvState::staged(vec![Pos::new(1, 2), Pos::new(2, 2)], vec![], 0);
    let tr = transition(&spec, &mut state, &[Action::Right, Action::Left]).unwrap();
    assert_eq!(state.agents, vec![Pos::new(1, 2), Pos::new(2, 2)]);
    assert_eq!(tr.rewards, vec![-1.0, -1.0]);
}

#[test]
fn following_into_a_vacated_cell_still_fails() {
    let spec = open_5x5();
    let mut state = EnvState::staged(vec![Pos::new(1, 2), Pos::new(2, 2)], vec![], 0);
    let tr = transition(&spec, &mut state, &[Action::Right, Action::Right]).unwrap();
    assert_eq!(state.agents, vec![Pos::new(1, 2), Pos::new(3, 2)]);
    assert_eq!(tr.rewards, vec![-1.0, 0.0]);
}

#[test]
fn malformed_actions_and_finished_episodes_are_rejected() {
    let spec = open_5x5();
    let mut state = EnvState::staged(vec![Pos::new(0, 0), Pos::new(4, 4)], vec![], 0);
    assert!(matches!(transition(&spec, &mut state, &[Action::Up]), Err(Error::Contract(_))));
    state.t = spec.horizon;
    assert!(matches!(
        transition(&spec, &mut state, &[Action::Up, Action::Up]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn done_exactly_at_horizon() {
    let spec = open_5x5();
    let mut env = Env::new(Arc::new(spec), vec![], 0).unwrap();
    for t in 1..=10 {
        let r = env.step(&[Action::Down, Action::Up]).unwrap();
        assert_eq!(r.done, t == 10);
    }
}

#[test]
fn local_view_centre_and_corner_band() {
    let spec = open_5x5();
    let state = EnvState::staged(vec![Pos::new(0, 0), Pos::new(4, 4)], vec![], 0);
    let obs = local_observation(&spec.map, &state, 0);
    assert!(obs.get(channel::SELF, 3, 3));
    assert_eq!(obs.channel_sum(channel::SELF), 1);
    for row in 0..VIEW {
        for col in 0..VIEW {
            assert_eq!(obs.get(channel::WALL, row, col), row < 3 || col < 3, "({row},{col})");
        }
    }
    // The other agent sits four cells away diagonally, outside the view.
    assert_eq!(obs.channel_sum(channel::AGENTS), 0);
    let other = local_observation(&spec.map, &state, 1);
    assert!(other.get(channel::SELF, 3, 3));
}

#[test]
fn object_two_cells_right_maps_to_row_3_col_5() {
    let spec = open_5x5();
    let objects = vec![
        Object {
            kind: ObjectKind::Star,
            pos: Pos::new(3, 2),
        },
        Object {
            kind: ObjectKind::Triangle,
            pos: Pos::new(1, 0),
        },
    ];
    let state = EnvState::staged(vec![Pos::new(1, 2), Pos::new(2, 3)], objects, 0);
    let obs = local_observation(&spec.map, &state, 0);
    assert!(obs.get(channel::STAR, 3, 5));
    assert_eq!(obs.channel_sum(channel::STAR), 1);
    assert!(obs.get(channel::TRIANGLE, 1, 3));
    assert!(obs.get(channel::AGENTS, 4, 4));
}

#[test]
fn merged_views() {
    let spec = EnvSpec::new(default_map(), &EnvConfig::default()).unwrap();
    let mut env = Env::new(Arc::new(spec), vec![CondKind::GPos, CondKind::OPos], 5).unwrap();
    let before = env.observe(0);
    assert_eq!(before.cond[0].len(), 625);
    assert_eq!(before.cond[0].channel_sum(0), 1);
    assert_eq!(before.cond[1].channel_sum(0), 20);
    assert_eq!(before.cond[1].channel_sum(1), 20);
    let p = before.position;
    assert!(before.cond[0].get(0, p.y as usize, p.x as usize));

    let mut moved = env.state().clone();
    moved.agents[0] = Pos::new(1, 1);
    env.set_state(moved);
    let after = env.observe(0);
    assert_ne!(after.cond[0], before.cond[0]);
    assert_eq!(after.cond[1], before.cond[1]);
}

#[test]
fn relative_view_centre_and_padding() {
    let spec = EnvSpec::new(default_map(), &EnvConfig::default()).unwrap();
    let mut state = EnvState::reset(&spec, 1).unwrap();
    state.agents[0] = Pos::new(12, 12);
    let rel = relative_view(&spec.map, &state, 0, CondKind::GPos);
    assert_eq!((rel.height, rel.width), (49, 49));
    assert!(rel.get(0, 24, 24));
    assert_eq!(rel.len(), 49 * 49);
    let rel = relative_view(&spec.map, &state, 0, CondKind::OPos);
    for &i in &rel.ones {
        let i = i as usize % (49 * 49);
        let (y, x) = (i / 49, i % 49);
        assert!((12..37).contains(&y) && (12..37).contains(&x));
    }
}

#[test]
fn relative_view_is_translation_invariant() {
    let spec = open_5x5();
    let objects = vec![Object {
        kind: ObjectKind::Star,
        pos: Pos::new(2, 1),
    }];
    let a = EnvState::staged(vec![Pos::new(1, 1), Pos::new(4, 4)], objects, 0);
    let shifted = EnvState::staged(
        vec![Pos::new(2, 3), Pos::new(0, 0)],
        vec![Object {
            kind: ObjectKind::Star,
            pos: Pos::new(3, 3),
        }],
        0,
    );
    for kind in [CondKind::GPos, CondKind::OPos] {
        assert_eq!(
            relative_view(&spec.map, &a, 0, kind),
            relative_view(&spec.map, &shifted, 0, kind)
        );
    }
}
