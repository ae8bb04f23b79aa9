# Handlers package（各モジュールは import 時に cli_app へコマンドを登録する）
