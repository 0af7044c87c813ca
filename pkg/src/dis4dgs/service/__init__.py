from .app import FRAME_MAGIC, create_app, pack_frame, unpack_frame_header

__all__ = ["create_app", "pack_frame", "unpack_frame_header", "FRAME_MAGIC"]
