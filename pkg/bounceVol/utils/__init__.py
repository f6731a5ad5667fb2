from .polyfile import PolytopeReader, PolytopeWriter
