"""CMake-driven build for the _lcnn extension module."""

import pathlib
import shutil
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = pathlib.Path(__file__).parent.resolve()
        build_dir = pathlib.Path(self.build_temp).resolve() / "cmake"
        # Build straight into the package source dir so editable installs see
        # the module, then copy it to the wheel staging location.
        pkg_dir = source_dir / "python" / "lcnn"
        out_dir = pathlib.Path(self.get_ext_fullpath(ext.name)).parent.resolve()
        out_dir.mkdir(parents=True, exist_ok=True)
        subprocess.run(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_dir),
                "-DLCNN_BUILD_PYTHON=ON",
                f"-DPython_EXECUTABLE={sys.executable}",
                f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={pkg_dir}",
                "-DCMAKE_BUILD_TYPE=Release",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_lcnn", "-j"],
            check=True,
        )
        for lib in pkg_dir.glob("_lcnn*.so"):
            shutil.copy2(lib, out_dir / lib.name)


setup(
    ext_modules=[CMakeExtension("lcnn._lcnn")],
    cmdclass={"build_ext": CMakeBuild},
)
