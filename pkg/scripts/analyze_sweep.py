"""
分析 sweep.csv：每個 (p, q) 的收斂情況，以及同一個 r 出現多個波速的位置

用法: python scripts/analyze_sweep.py runs/sweep/sweep.csv
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

csv_file_path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs") / "sweep" / "sweep.csv"

if not csv_file_path.exists():
    print(f"❌ 找不到檔案: {csv_file_path}")
    sys.exit(1)

config_hash = None
rows = []
skipped_rows = 0

with open(csv_file_path, 'r', encoding='utf-8') as csvfile:
    first = csvfile.readline()
    if first.startswith('# config_hash='):
        config_hash = first.strip().split('=', 1)[1]
    else:
        csvfile.seek(0)
    reader = csv.DictReader(csvfile)

    for row in reader:
        try:
            rows.append({
                'p': int(row['p']),
                'q': int(row['q']),
                'c': float(row['c']),
                'r': float(row['r']),
                'converged': row['converged'] == 'True',
                'residual': float(row['residual']),
                'front_amplitude': float(row['front_amplitude']),
                'seed': row['seed'],
                'in_theory': row.get('in_theory', 'True') == 'True',
            })
        except (KeyError, ValueError):
            skipped_rows += 1

print("=" * 70)
print(f"  📊 Sweep 分析: {csv_file_path}")
if config_hash:
    print(f"  設定雜湊: {config_hash[:16]}")
print("=" * 70)

# ==========================================
# 每個 (p, q) 的收斂率
# ==========================================
cells = defaultdict(list)
for row in rows:
    cells[(row['p'], row['q'])].append(row)

print("p, q, c, 收斂/總數, 最大殘差, 理論範圍內")
print("-" * 70)
for (p, q), cell_rows in sorted(cells.items()):
    ok = [row for row in cell_rows if row['converged']]
    worst = max((row['residual'] for row in ok), default=float('nan'))
    marker = '✅' if ok else '❌'
    theory = '是' if cell_rows[0]['in_theory'] else '否'
    print(f"{marker} {p}, {q}, {cell_rows[0]['c']:.6f}, {len(ok)}/{len(cell_rows)}, {worst:.2e}, {theory}")

# ==========================================
# 多值波速
# ==========================================
speeds = defaultdict(set)
for row in rows:
    if row['converged']:
        speeds[row['r']].add(row['c'])

multivalued = {r: sorted(cs) for r, cs in sorted(speeds.items()) if len(cs) > 1}
print()
if multivalued:
    print(f"⚠️ 有 {len(multivalued)} 個 r 對應多個波速:")
    for r, cs in multivalued.items():
        print(f"   r = {r:.4f}: " + ", ".join(f"{c:.6f}" for c in cs))
else:
    print("✅ 每個 r 最多只有一個波速")

seeds = defaultdict(int)
for row in rows:
    if row['converged']:
        seeds[row['seed']] += 1
print()
print("收斂解的種子來源: " + ", ".join(f"{name}={count}" for name, count in sorted(seeds.items())))

print(f"\n共讀取了 {len(rows)} 行資料，收斂 {sum(row['converged'] for row in rows)} 行")
if skipped_rows > 0:
    print(f"跳過了 {skipped_rows} 行格式錯誤或缺少數據的資料")
