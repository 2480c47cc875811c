"""
Can a server tell chatting clients from idle ones?
==================================================

The same script runs twice. In branch 0 the clients really chat; in branch 1
every operation is replaced by cover traffic. The comparator lines the two
traces up frame by frame.
"""

from pirmsg.harness.game import compare_traces, format_verdict, real_vs_fake_script, run_game

script = real_vs_fake_script(m=3, rounds=60, seed=7)
chatting = run_game(script, 0, seed=7)
idle = run_game(script, 1, seed=7)

print(f"branch 0 delivered {len(chatting.delivered)} messages, branch 1 delivered {len(idle.delivered)}")
print(f"frames observed: {len(chatting.traces)} vs {len(idle.traces)}")
# Shapes must match exactly. The p-values come from one short run each, so an
# occasional small one is expected; read_key holds X25519 public keys, whose
# top bit is always clear, and only its cross-branch chi2_p is meaningful.
print(format_verdict(compare_traces(chatting.traces, idle.traces)))
