# Typed federated tensor language
