#!/usr/bin/env python3
"""
MoMaster - full-body motion from head and hand tracking.

    ./MoMaster.py gen-data --config configs/gen_data.ini --out runs/data
    ./MoMaster.py train --model diffusion --config configs/toy.ini --data runs/data --out runs/dm
    ./MoMaster.py sample --checkpoint runs/dm/model.ckpt --input runs/data/seq_0003.mseq --out runs/dm/seq_0003.pred.mseq
    ./MoMaster.py evaluate --gt runs/data --checkpoint runs/dm/model.ckpt --mask-fraction 0.1 --out runs/eval
    ./MoMaster.py bench --preset full --out runs/bench
    ./MoMaster.py ablate timestep --data runs/data --out runs/ablate --seeds 0,1,2
"""
import sys

from motionsrc.cli import main

if __name__ == "__main__":
    sys.exit(main())
