"""
How many visual tokens reach the decoder
========================================

Compare three input policies over video length: forgetting with clamps,
a fixed 64-frame sampler, and every frame at 1 FPS.
"""

from hourmem.harness import token_count, token_table, uniform_crossover

rows = token_table([20, 60, 128, 600, 1025, 1026, 2048, 3600, 7200])
print(f"{'seconds':>8} {'hour_llava':>11} {'uniform_64':>11} {'vanilla':>9}")
for r in rows:
    print(f"{r['seconds']:>8} {r['hour_llava']:>11} {r['uniform_64']:>11} {r['vanilla_1fps']:>9}")

# Short clips keep every frame; past 128 s the 1/4 ratio kicks in; past
# 2048 s the 512-frame cap holds the budget at 8192 tokens.
t = uniform_crossover()
print(f"forgetting spends no more than the 64-frame sampler up to T = {t} s")
print(token_count("hour_llava", t), "<=", token_count("uniform_64", t))
print(token_count("hour_llava", t + 1), ">", token_count("uniform_64", t + 1))
