"""CMake-driven build of the nnqc._core extension (pybind11 pattern)."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        extdir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        build_dir = Path(self.build_temp) / ext.name
        build_dir.mkdir(parents=True, exist_ok=True)

        cmake_args = [
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={extdir}",
            f"-DPython3_EXECUTABLE={sys.executable}",
            "-DCMAKE_BUILD_TYPE=Release",
            "-DNNQC_BUILD_PYTHON=ON",
            "-DNNQC_BUILD_CLI=OFF",
            "-DNNQC_BUILD_TESTS=OFF",
        ]
        try:
            import pybind11

            cmake_args.append(f"-Dpybind11_DIR={pybind11.get_cmake_dir()}")
        except ImportError:
            pass

        source_dir = Path(__file__).resolve().parent
        subprocess.run(
            ["cmake", str(source_dir), *cmake_args], cwd=build_dir, check=True
        )
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_core",
             f"-j{os.cpu_count() or 2}"],
            cwd=build_dir,
            check=True,
        )


setup(
    packages=["nnqc"],
    package_dir={"": "python"},
    ext_modules=[CMakeExtension("nnqc._core")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
