"""Image codecs, resizing, manifests, synthetic data and heatmaps."""
from tobias.images.codecs import decode_ppm, encode_ppm, load_image, save_image
from tobias.images.manifest import ManifestRecord, parse_manifest, read_manifest, write_manifest
from tobias.images.synthetic import SyntheticSpec, generate_synthetic
from tobias.images.transforms import denormalize, normalize, resize_bilinear

__all__ = ["ManifestRecord", "SyntheticSpec", "decode_ppm", "denormalize", "encode_ppm",
           "generate_synthetic", "load_image", "normalize", "parse_manifest", "read_manifest",
           "resize_bilinear", "save_image", "write_manifest"]
