//! Hands descriptions to an external speech command, one process per
//! utterance, text on its standard input.

use std::collections::VecDeque;
use std::io::Write;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use framerelay_core::Priority;

const POLL: Duration = Duration::from_millis(5);

#[derive(Default)]
struct Queue {
    pending: VecDeque<String>,
    /// An utterance process is running.
    speaking: bool,
    /// Set by an INTERRUPT while speaking; the worker kills the process.
    cut: bool,
    disabled: bool,
    finishing: bool,
    launched: u64,
}

struct Shared {
    queue: Mutex<Queue>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// ROUTINE text queues behind the current utterance. INTERRUPT text
/// discards the queue and terminates the running utterance first.
pub struct TtsHook {
    shared: Arc<Shared>,
    worker: Option<thread::JoinHandle<()>>,
}

impl TtsHook {
    /// `command` runs under `sh -c`.
    pub fn spawn(command: String) -> Self {
        Self::with_shell("sh", command)
    }

    /// Runs `command` as `<shell> -c <command>`.
    pub fn with_shell(shell: &str, command: String) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue::default()),
            wake: Condvar::new(),
        });
        let worker = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("tts".into())
                .spawn({
                    let shell = shell.to_owned();
                    move || worker(&shared, &shell, &command)
                })
                .expect("spawn tts thread")
        };
        TtsHook {
            shared,
            worker: Some(worker),
        }
    }

    pub fn speak(&self, text: &str, priority: Priority) {
        let mut q = self.shared.lock();
        if q.disabled {
            return;
        }
        if priority == Priority::Interrupt {
            q.pending.clear();
            if q.speaking {
                q.cut = true;
            }
        }
        q.pending.push_back(text.to_owned());
        drop(q);
        self.shared.wake.notify_all();
    }

    /// Processes launched so far.
    pub fn launched(&self) -> u64 {
        self.shared.lock().launched
    }

    pub fn is_disabled(&self) -> bool {
        self.shared.lock().disabled
    }

    /// Lets queued utterances finish, then stops the worker.
    pub fn finish(mut self) {
        self.stop(false);
    }

    /// Like [`TtsHook::finish`], but cuts whatever is still speaking or
    /// queued after `grace`.
    pub fn finish_within(mut self, grace: Duration) {
        let deadline = std::time::Instant::now() + grace;
        let mut q = self.shared.lock();
        while (q.speaking || !q.pending.is_empty()) && !q.disabled {
            let now = std::time::Instant::now();
            if now >= deadline {
                break;
            }
            q = self.shared.wake.wait_timeout(q, (deadline - now).min(POLL)).unwrap_or_else(|e| e.into_inner()).0;
        }
        drop(q);
        self.stop(true);
    }

    fn stop(&mut self, cancel: bool) {
        {
            let mut q = self.shared.lock();
            q.finishing = true;
            if cancel {
                q.pending.clear();
                q.cut = q.speaking;
            }
        }
        self.shared.wake.notify_all();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Dropping without [`TtsHook::finish`] cuts the current utterance and
/// discards the queue.
impl Drop for TtsHook {
    fn drop(&mut self) {
        self.stop(true);
    }
}

fn launch(shell: &str, command: &str, text: &str) -> std::io::Result<Child> {
    let mut child = Command::new(shell)
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        // keep standard output for the transcript
        .stdout(Stdio::from(std::io::stderr()))
        // own process group, so a cut also stops whatever the shell started
        .process_group(0)
        .spawn()?;
    if let Some(mut stdin) = child.stdin.take() {
        // the command may exit without reading; that is its business
        let _ = stdin.write_all(text.as_bytes());
        let _ = stdin.write_all(b"\n");
    }
    Ok(child)
}

fn terminate(child: &mut Child) {
    // SAFETY: killpg has no memory-safety preconditions; the group id is
    // the child's pid because it was started as a group leader.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn worker(shared: &Shared, shell: &str, command: &str) {
    loop {
        let text = {
            let mut q = shared.lock();
            loop {
                if let Some(t) = q.pending.pop_front() {
                    break t;
                }
                if q.finishing {
                    return;
                }
                q = shared.wake.wait(q).unwrap_or_else(|e| e.into_inner());
            }
        };
        let mut child = match launch(shell, command, &text) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("relay-client: speech command failed to start ({e}); speech disabled");
                let mut q = shared.lock();
                q.disabled = true;
                q.pending.clear();
                continue;
            }
        };
        {
            let mut q = shared.lock();
            q.launched += 1;
            q.speaking = true;
            q.cut = false;
        }
        loop {
            if matches!(child.try_wait(), Ok(Some(_)) | Err(_)) {
                break;
            }
            let q = shared.lock();
            if q.cut {
                drop(q);
                terminate(&mut child);
                break;
            }
            let _ = shared.wake.wait_timeout(q, POLL);
        }
        let mut q = shared.lock();
        q.speaking = false;
        q.cut = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn wait_for(mut cond: impl FnMut() -> bool) -> bool {
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            if cond() {
                return true;
            }
            thread::sleep(Duration::from_millis(10));
        }
        false
    }

    #[test]
    fn routine_utterances_are_all_spoken_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("spoken.txt");
        let hook = TtsHook::spawn(format!("cat >> '{}'", out.display()));
        for t in ["one", "two", "three"] {
            hook.speak(t, Priority::Routine);
        }
        hook.finish();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "one\ntwo\nthree\n");
    }

    #[test]
    fn finish_within_bounds_a_stalled_command() {
        let hook = TtsHook::spawn("sleep 30".into());
        hook.speak("stuck", Priority::Routine);
        hook.speak("behind", Priority::Routine);
        assert!(wait_for(|| hook.launched() == 1));
        let started = Instant::now();
        hook.finish_within(Duration::from_millis(300));
        let took = started.elapsed();
        assert!(took >= Duration::from_millis(250) && took < Duration::from_secs(5), "{took:?}");
    }

    #[test]
    fn interrupt_cuts_a_long_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("spoken.txt");
        // read the line, record it, then take a long time "speaking" it
        let cmd = format!("read line; echo \"$line\" >> '{}'; sleep 30", out.display());
        let hook = TtsHook::spawn(cmd);
        hook.speak("long", Priority::Routine);
        assert!(wait_for(|| std::fs::read_to_string(&out).is_ok_and(|s| s == "long\n")));
        hook.speak("queued", Priority::Routine);
        let started = Instant::now();
        hook.speak("alert", Priority::Interrupt);
        assert!(wait_for(|| std::fs::read_to_string(&out).is_ok_and(|s| s == "long\nalert\n")));
        assert!(started.elapsed() < Duration::from_secs(10));
        assert_eq!(hook.launched(), 2);
        // the alert utterance is cut too so the test does not wait 30 s
        hook.speak("done", Priority::Interrupt);
        assert!(wait_for(|| hook.launched() == 3));
        drop(hook);
    }

    #[test]
    fn failed_launch_disables_the_hook() {
        let hook = TtsHook::with_shell("/nonexistent/sh", "true".into());
        hook.speak("hi", Priority::Routine);
        assert!(wait_for(|| hook.is_disabled()));
        hook.speak("again", Priority::Interrupt);
        assert_eq!(hook.launched(), 0);
        hook.finish();
    }
}
