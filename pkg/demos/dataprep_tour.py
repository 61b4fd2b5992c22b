"""
Validating and packing instruction data
=======================================
"""

import json

from hourmem.dataprep import dataset_stats, pack_conversations, synthetic_qa, synthetic_video, validate_records

lines = [json.dumps(synthetic_video("v00000", duration_s=900, num_events=4))]
lines += [json.dumps(q.to_dict()) for q in synthetic_qa(12, num_videos=1, seed=0)]
lines.append(json.dumps(synthetic_video("short", duration_s=120)))     # under 3 minutes
lines.append('{"type": "qa", "video_id": "v00000"')                     # truncated line

report = validate_records(lines)
print(report.summary())
print("rejected:", report.rejected)

qa = [r for r in report.accepted if r["type"] == "qa"]
convs = pack_conversations(qa, seed=0)
print("conversation sizes:", [len(c.turns) for c in convs])            # 12 QAs -> 5, 5, 2

stats = dataset_stats(report.accepted)
print("format counts:", stats["format_counts"])
print("nonzero duration buckets:",
      [(lo, c) for lo, c in zip(stats["duration_edges_s"], stats["duration_counts"]) if c])
