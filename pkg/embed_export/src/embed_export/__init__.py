from .export import ExportConfig, ExportResult, export_image_vectors, export_text_vectors

__all__ = ["ExportConfig", "ExportResult", "export_text_vectors", "export_image_vectors"]
