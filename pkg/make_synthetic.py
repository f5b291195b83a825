import argparse
import os

from dotenv import load_dotenv

from vqe.codec_sim import simulate_sequence
from vqe.data import synthetic_clip
from vqe.frames import coded_dims
from vqe.partition import write_tu_file
from vqe.yuv import write_yuv420

# Load environment variables from .env file
load_dotenv()


def make_synthetic(path: str, frames: int, width: int, height: int, seed: int, qp: int | None = None):
    """Write a synthetic raw clip, and with a QP its simulated compression plus TU sidecar."""
    print(f"Writing {frames} frames of {width}x{height} to {path}")
    clip = synthetic_clip(frames, width, height, seed=seed)
    write_yuv420(clip, path)
    if qp is None:
        return
    decoded, partitions, bits = simulate_sequence(clip, qp)
    stem, _ = os.path.splitext(path)
    write_yuv420(decoded, f"{stem}_qp{qp}.yuv")
    write_tu_file(f"{stem}_qp{qp}.tu", partitions, coded_dims((width, height)))
    print(f"Compressed at QP {qp}: {sum(bits)} estimated bits")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write a synthetic YUV420p test clip")
    parser.add_argument("path")
    parser.add_argument("--frames", type=int, default=int(os.getenv("VQE_SYNTHETIC_FRAMES", "10")))
    parser.add_argument("--width", type=int, default=96)
    parser.add_argument("--height", type=int, default=96)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--qp", type=int)
    args = parser.parse_args()
    make_synthetic(args.path, args.frames, args.width, args.height, args.seed, args.qp)
