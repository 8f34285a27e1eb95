use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use pixenv::distractor::DistractorMode;
use pixenv::env::EnvConfig;
use pixenv::recorder::{ActionSource, Policy};
use pixenv::Env32;

struct Counting;

static ALLOCS: AtomicUsize = AtomicUsize::new(0);
static BYTES: AtomicUsize = AtomicUsize::new(0);
static LIVE: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::Relaxed);
        BYTES.fetch_add(layout.size(), Ordering::Relaxed);
        LIVE.fetch_add(layout.size(), Ordering::Relaxed);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::Relaxed);
        BYTES.fetch_add(new_size, Ordering::Relaxed);
        LIVE.fetch_add(new_size, Ordering::Relaxed);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn stepping_a_large_batch_does_not_allocate_after_warmup() {
    let pack = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/synthetic.pxvp");
    for mode in DistractorMode::ALL {
        let config = EnvConfig {
            model: "hopper_lite".into(),
            batch: 1000,
            width: 32,
            height: 32,
            distractor_mode: mode,
            video_pack_path: Some(pack.into()),
            ..EnvConfig::default()
        };
        let env = Env32::new(&config).unwrap();
        let policy = ActionSource::new(Policy::Random(None), &env).unwrap();
        let mut state = env.initial_state(0).unwrap();
        let mut out = env.new_output();
        env.observe_into(&state, &mut out);
        let mut actions = vec![0.0f32; env.batch() * env.n_joints()];
        let mut resets = 0;
        let mut before = (0, 0, 0);
        for t in 0..100 {
            if t == 2 {
                before = (ALLOCS.load(Ordering::SeqCst), BYTES.load(Ordering::SeqCst), LIVE.load(Ordering::SeqCst));
            }
            policy.actions_into(t, &out.obs, &mut actions).unwrap();
            env.step_into(&mut state, &actions, &mut out).unwrap();
            resets += out.done.iter().filter(|&&d| d).count();
        }
        let allocs = ALLOCS.load(Ordering::SeqCst) - before.0;
        let bytes = BYTES.load(Ordering::SeqCst) - before.1;
        let growth = LIVE.load(Ordering::SeqCst) as isize - before.2 as isize;
        assert!(resets > 0, "{mode}: expected auto-resets to be exercised");
        // The engine itself allocates nothing. rayon's job injector swaps one
        // fixed-size block per ~63 parallel calls and frees the old one.
        assert!(allocs <= 98 * 2 / 63 + 1, "{mode}: {allocs} allocations ({bytes} bytes) over 98 steps");
        assert!(growth <= 2048, "{mode}: live heap grew by {growth} bytes");
    }
}
