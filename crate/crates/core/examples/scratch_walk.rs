//! Dev scratch: roll out the model-based baseline and print per-step stats.

use planarwalk::env::{EpisodeConfig, WalkEnv};
use planarwalk::rigid_body::{RobotModel, RobotVariant};
use planarwalk::tracking::{ControllerKind, GainSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let robot = args.get(1).map(|s| s.as_str()).unwrap_or("rabbit");
    let ctrl = args.get(2).map(|s| s.as_str()).unwrap_or("fl");
    let gains = args.get(3).map(|s| s.as_str()).unwrap_or("nominal");
    let v: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);

    let model = RobotModel::named(RobotVariant::parse(robot).unwrap());
    {
        use planarwalk::rigid_body::{com_state, standing_pose, Kinematics};
        let q = standing_pose(&model, 0.7);
        let kin = Kinematics::compute(&model, &q, &nalgebra::DVector::zeros(model.dof()));
        let (com, _) = com_state(&model, &kin);
        println!("standing CoM: ({:.3}, {:.3})", com.x, com.y);
    }
    let mut env = WalkEnv::new(
        model,
        ControllerKind::parse(ctrl).unwrap(),
        GainSet::parse(gains).unwrap(),
        EpisodeConfig::constant_speed(v, seed),
    )
    .unwrap();

    let mut total = 0.0;
    for k in 0..300 {
        let a = env.baseline_action().to_normalized();
        let r = env.hl_step(a);
        total += r.reward;
        if k % 10 == 0 || r.terminated {
            println!(
                "k={k:3} t={:.2} v_bar={:+.3} x={:+.3} L={:+.2} phi={:+.3} h={:.3} psw={:+.3} r={:.3} fall={:?}",
                r.diagnostics.t,
                r.diagnostics.v_bar,
                r.observation.x,
                r.observation.l_y,
                r.diagnostics.q_phi,
                r.diagnostics.h,
                r.diagnostics.action.p_sw_x,
                r.reward,
                r.diagnostics.fall
            );
        }
        if r.terminated {
            println!("FELL at step {k}: {:?}", env.last_error);
            break;
        }
    }
    println!("steps recorded: {}  total reward {total:.1}", env.step_records.len());
    if let Ok(preds) = planarwalk::alip::prediction_error_study(&env.step_records, &env.alip) {
        let errs: Vec<f64> = preds.iter().map(|p| p.error()).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        println!("prediction errors (m/s): mean {mean:.4}  last {:?}",
            &errs[errs.len().saturating_sub(5)..]);
    }
}
