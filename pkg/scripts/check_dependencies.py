"""
检查运行/打包环境的 Python 依赖
用于验证 numpy / scipy / pydantic / joblib 的版本与 requirements.txt 一致
"""

import os
import re
import sys


def read_requirements(path):
    """requirements.txt → {包名: 固定版本}"""
    pins = {}
    if not os.path.exists(path):
        return pins
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            m = re.match(r"^([A-Za-z0-9_.\-]+)(?:\[.*\])?==(\S+)$", line)
            if m:
                pins[m.group(1).lower()] = m.group(2)
    return pins


def check_python_packages(pins):
    """检查关键 Python 包，返回是否全部可用"""
    print("\n检查关键 Python 包:")

    packages = {
        "numpy": "numpy",
        "scipy": "scipy",
        "pydantic": "pydantic",
        "joblib": "joblib",
        "pytest": "pytest",
    }

    ok = True
    for module, package in packages.items():
        try:
            mod = __import__(module)
        except ImportError:
            print(f"  ❌ {package}: 未安装")
            ok = False
            continue
        version = getattr(mod, "__version__", "未知")
        pinned = pins.get(package)
        if pinned and pinned != version:
            print(f"  ⚠️  {package}: {version}（requirements.txt 固定为 {pinned}）")
        else:
            print(f"  ✅ {package}: {version}")
    return ok


def check_tomllib():
    try:
        import tomllib  # noqa: F401
    except ImportError:
        print("  ❌ tomllib 不可用，需要 Python 3.11+")
        return False
    print("  ✅ tomllib 可用")
    return True


if __name__ == "__main__":
    print("=" * 60)
    print("依赖检查工具")
    print("=" * 60)

    print(f"\nPython 版本: {sys.version}")
    print(f"Python 路径: {sys.executable}")

    is_packaged = getattr(sys, "frozen", False)
    if is_packaged:
        print("\n📦 打包环境检测:")
        print(f"  可执行文件: {sys.executable}")
        if hasattr(sys, "_MEIPASS"):
            print(f"  临时解压目录: {sys._MEIPASS}")
    else:
        print("\n🔧 开发环境")

    root = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
    pins = read_requirements(os.path.join(root, "requirements.txt"))

    print("\n" + "=" * 60)
    packages_ok = check_python_packages(pins)
    toml_ok = check_tomllib()

    print("\n" + "=" * 60)
    if packages_ok and toml_ok:
        print("✅ 依赖检查通过！")
    else:
        print("⚠️  缺少依赖，请运行 pip install -r requirements.txt")
    print("=" * 60)
    sys.exit(0 if packages_ok and toml_ok else 1)
